from __future__ import annotations

import json
import logging
import struct

import numpy as np

from app.core.exceptions import ChecksumMismatchException, ContainerException, TruncatedContainerException, VersionSkewException
from app.domain.interfaces.repository import PathLike
from app.domain.models.denoiser import DenoiserParams
from app.domain.models.training import Checkpoint, NormStats, OptimState
from app.infrastructure.repositories.base import FileRepository, blake2b_64, checksum_hex

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SFDC"
CHECKPOINT_VERSION = 1

# magic, version, header-json length, body checksum
PREFIX = struct.Struct("<4sHIQ")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """JSON header, then float32 weights and float64 AdamW moments, all little-endian."""
    params = ckpt.params.flat.astype("<f4")
    body = params.tobytes() + ckpt.state.m.astype("<f8").tobytes() + ckpt.state.v.astype("<f8").tobytes()
    header = json.dumps(
        {
            "n_params": int(params.size),
            "layout": {name: [offset, list(shape)] for name, (offset, shape) in ckpt.params.layout.items()},
            "init_seed": ckpt.params.init_seed,
            "step": ckpt.state.step,
            "stats": {"mu": ckpt.stats.mu, "sigma": ckpt.stats.sigma},
            "run_config": ckpt.run_config,
        },
        sort_keys=True,
    ).encode("utf-8")
    return PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header), blake2b_64(body)) + header + body


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < PREFIX.size:
        raise TruncatedContainerException("checkpoint prefix is truncated")
    magic, version, header_len, checksum = PREFIX.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ContainerException(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise VersionSkewException(f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}")
    start = PREFIX.size + header_len
    if len(data) < start:
        raise TruncatedContainerException("checkpoint header is truncated")
    header = json.loads(data[PREFIX.size : start].decode("utf-8"))
    n = int(header["n_params"])
    expected = n * 4 + 2 * n * 8
    body = data[start:]
    if len(body) != expected:
        raise TruncatedContainerException(f"checkpoint body needs {expected} bytes, got {len(body)}")
    if blake2b_64(body) != checksum:
        raise ChecksumMismatchException("checkpoint checksum does not match")
    flat = np.frombuffer(body, dtype="<f4", count=n).astype(np.float32)
    m = np.frombuffer(body, dtype="<f8", count=n, offset=n * 4).copy()
    v = np.frombuffer(body, dtype="<f8", count=n, offset=n * 12).copy()
    layout = {name: (int(offset), tuple(shape)) for name, (offset, shape) in header["layout"].items()}
    return Checkpoint(
        params=DenoiserParams(flat, layout, int(header["init_seed"])),
        state=OptimState(m, v, int(header["step"])),
        stats=NormStats(float(header["stats"]["mu"]), float(header["stats"]["sigma"])),
        run_config=header["run_config"],
    )


class CheckpointRepository(FileRepository[Checkpoint]):
    def save(self, entity: Checkpoint, path: PathLike) -> str:
        data = encode_checkpoint(entity)
        self.write_bytes(path, data)
        logger.info("checkpoint %s at step %d", path, entity.state.step)
        return checksum_hex(data)

    def load(self, path: PathLike) -> Checkpoint:
        return decode_checkpoint(self.read_bytes(path))
