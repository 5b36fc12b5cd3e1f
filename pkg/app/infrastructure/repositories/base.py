from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Generic, TypeVar

from app.core.exceptions import NotFoundException, StorageException
from app.domain.interfaces.repository import BaseRepository, PathLike

logger = logging.getLogger(__name__)

T = TypeVar("T")

CHECKSUM_BYTES = 8


def blake2b_64(data: bytes) -> int:
    """64-bit BLAKE2b digest as an unsigned little-endian integer."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=CHECKSUM_BYTES).digest(), "little")


def checksum_hex(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=CHECKSUM_BYTES).hexdigest()


def file_checksum(path: PathLike) -> str:
    """Checksum of a whole file, for recording inputs in sidecars."""
    h = hashlib.blake2b(digest_size=CHECKSUM_BYTES)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class FileRepository(BaseRepository[T], Generic[T]):
    """Base repository implementation on the local filesystem with atomic writes"""

    def exists(self, path: PathLike) -> bool:
        return Path(path).is_file()

    def write_bytes(self, path: PathLike, data: bytes) -> None:
        """Temp file in the target directory, fsync, then os.replace."""
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as e:
            raise StorageException(f"Error writing {target}: {e}")
        logger.debug("wrote %s (%d bytes)", target, len(data))

    def write_text(self, path: PathLike, text: str) -> None:
        self.write_bytes(path, text.encode("utf-8"))

    def read_bytes(self, path: PathLike) -> bytes:
        target = Path(path)
        if not target.is_file():
            raise NotFoundException(f"artifact not found: {target}")
        try:
            return target.read_bytes()
        except OSError as e:
            raise StorageException(f"Error reading {target}: {e}")
