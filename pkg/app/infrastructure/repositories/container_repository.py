from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.exceptions import (
    ChecksumMismatchException,
    ContainerException,
    NotFoundException,
    TruncatedContainerException,
    VersionSkewException,
)
from app.domain.interfaces.repository import PathLike
from app.domain.models.container import FORMAT_VERSION, MAGIC, MASK_MAGIC, FieldContainer, payload_nbytes
from app.infrastructure.repositories.base import FileRepository, blake2b_64, checksum_hex

logger = logging.getLogger(__name__)

# magic, version, flags, n_traj, n_frames, H, W, payload checksum
HEADER = struct.Struct("<4sHHIIIIQ")
# magic, n_pairs, H, W, mask-body checksum
MASK_HEADER = struct.Struct("<4sIIIQ")
INSTANCE_ID = struct.Struct("<I")

FLAG_MASKS = 0x1


@dataclass(frozen=True)
class ContainerHeader:
    version: int
    flags: int
    n_traj: int
    n_frames: int
    height: int
    width: int
    checksum: int

    @property
    def payload_nbytes(self) -> int:
        return payload_nbytes(self.n_traj, self.n_frames, self.height, self.width)

    @property
    def has_masks(self) -> bool:
        return bool(self.flags & FLAG_MASKS)


def _plane_nbytes(h: int, w: int) -> int:
    return (h * w + 7) // 8


def _encode_masks(c: FieldContainer) -> bytes:
    h, w = c.grid
    body = bytearray()
    for idx, inst in enumerate(c.instance_ids):
        body += INSTANCE_ID.pack(int(inst))
        body += np.packbits(c.m_i[idx].reshape(-1)).tobytes()
        body += np.packbits(c.m_o[idx].reshape(-1)).tobytes()
    body = bytes(body)
    return MASK_HEADER.pack(MASK_MAGIC, len(c.instance_ids), h, w, blake2b_64(body)) + body


def encode_container(c: FieldContainer) -> bytes:
    payload = c.frames.tobytes(order="C")
    flags = FLAG_MASKS if c.has_masks else 0
    header = HEADER.pack(MAGIC, FORMAT_VERSION, flags, c.n_traj, c.n_frames, *c.grid, blake2b_64(payload))
    out = header + payload
    if c.has_masks:
        out += _encode_masks(c)
    return out


def decode_header(data: bytes) -> ContainerHeader:
    if len(data) < HEADER.size:
        raise TruncatedContainerException(f"container header needs {HEADER.size} bytes, got {len(data)}")
    magic, version, flags, n_traj, n_frames, h, w, checksum = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerException(f"not a field container (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionSkewException(f"container version {version}, this build reads version {FORMAT_VERSION}")
    return ContainerHeader(version, flags, n_traj, n_frames, h, w, checksum)


def _decode_masks(data: bytes, offset: int, grid: Tuple[int, int]) -> Tuple[List[int], np.ndarray, np.ndarray, int]:
    if len(data) < offset + MASK_HEADER.size:
        raise TruncatedContainerException("mask section header is truncated")
    magic, n_pairs, h, w, checksum = MASK_HEADER.unpack_from(data, offset)
    if magic != MASK_MAGIC:
        raise ContainerException(f"bad mask section magic {magic!r}")
    if (h, w) != grid:
        raise ContainerException(f"mask grid {(h, w)} differs from frame grid {grid}")
    plane = _plane_nbytes(h, w)
    body_len = n_pairs * (INSTANCE_ID.size + 2 * plane)
    start = offset + MASK_HEADER.size
    body = data[start : start + body_len]
    if len(body) != body_len:
        raise TruncatedContainerException(f"mask section needs {body_len} bytes, got {len(body)}")
    if blake2b_64(body) != checksum:
        raise ChecksumMismatchException("mask section checksum does not match")
    ids: List[int] = []
    m_i = np.zeros((n_pairs, h, w), dtype=bool)
    m_o = np.zeros((n_pairs, h, w), dtype=bool)
    pos = 0
    for k in range(n_pairs):
        (inst,) = INSTANCE_ID.unpack_from(body, pos)
        pos += INSTANCE_ID.size
        ids.append(inst)
        for planes in (m_i, m_o):
            bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8, count=plane, offset=pos), count=h * w)
            planes[k] = bits.reshape(h, w).astype(bool)
            pos += plane
    return ids, m_i, m_o, start + body_len


def decode_container(data: bytes) -> FieldContainer:
    header = decode_header(data)
    start = HEADER.size
    end = start + header.payload_nbytes
    if len(data) < end:
        raise TruncatedContainerException(
            f"payload declares {header.payload_nbytes} bytes, file holds {len(data) - start}"
        )
    payload = data[start:end]
    if blake2b_64(payload) != header.checksum:
        raise ChecksumMismatchException("payload checksum does not match the header")
    shape = (header.n_traj, header.n_frames, header.height, header.width)
    frames = np.frombuffer(payload, dtype="<f4").reshape(shape) if payload else np.zeros(shape, dtype="<f4")
    ids: List[int] = []
    m_i = m_o = None
    offset = end
    if header.has_masks:
        ids, m_i, m_o, offset = _decode_masks(data, end, (header.height, header.width))
    if offset != len(data):
        raise ContainerException(f"{len(data) - offset} unexpected trailing bytes")
    return FieldContainer(frames.copy(), ids, m_i, m_o)


class ContainerRepository(FileRepository[FieldContainer]):
    """Single-file dataset container: header, float32 payload, optional mask section."""

    def save(self, entity: FieldContainer, path: PathLike) -> str:
        data = encode_container(entity)
        self.write_bytes(path, data)
        checksum = checksum_hex(data)
        logger.info(
            "container %s: %d x %d frames of %dx%d%s",
            path, entity.n_traj, entity.n_frames, *entity.grid, " + masks" if entity.has_masks else "",
        )
        return checksum

    def load(self, path: PathLike) -> FieldContainer:
        return decode_container(self.read_bytes(path))

    def header(self, path: PathLike) -> ContainerHeader:
        if not self.exists(path):
            raise NotFoundException(f"artifact not found: {path}")
        with open(path, "rb") as fh:
            return decode_header(fh.read(HEADER.size))
