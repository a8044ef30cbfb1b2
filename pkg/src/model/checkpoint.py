"""
Checkpoint Store
Named-matrix binary files: magic, a JSON header carrying the layout
manifest and hyperparameters, then every tensor row-major as '<f8'.
"""

import json
import os
import struct
from typing import Optional, Tuple

import numpy as np

from ..core.errors import CheckpointError
from ..core.models import HyperParams
from ..utils.hashing import layout_digest
from ..utils.logger import setup_logger
from .params import ModelParams, build_layout

logger = setup_logger(__name__)

MAGIC = b"FNRCKPT1"
_HEADER_LEN = struct.Struct("<Q")


def save_checkpoint(params: ModelParams, path: str, seed: Optional[int] = None) -> str:
    """Write params to path; returns the layout digest stored in the header.

    `seed` is the run seed, kept so evaluation can redraw the same sampled
    test negatives as training did.
    """
    layout = params.layout()
    digest = layout_digest(layout)
    header = {
        "layout": [[name, list(shape)] for name, shape in layout],
        "layout_digest": digest,
        "hyperparams": params.hp.model_dump(),
        "seed": seed,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(_HEADER_LEN.pack(len(encoded)))
        handle.write(encoded)
        for name, _ in layout:
            handle.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())

    logger.info(
        "Checkpoint saved",
        extra={"event_type": "checkpoint.saved", "path": path, "layout_digest": digest}
    )
    return digest


def read_header(path: str) -> Tuple[dict, int]:
    """Returns (header, offset of the first value byte)."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        raw_len = handle.read(_HEADER_LEN.size)
        if len(raw_len) != _HEADER_LEN.size:
            raise CheckpointError(f"{path}: truncated header")
        (length,) = _HEADER_LEN.unpack(raw_len)
        try:
            header = json.loads(handle.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: unreadable header: {e}") from e
    return header, len(MAGIC) + _HEADER_LEN.size + length


def load_checkpoint(path: str, hp: HyperParams) -> ModelParams:
    """Load a checkpoint written for `hp`; any layout difference is a CheckpointError."""
    header, offset = read_header(path)
    stored = [(name, tuple(shape)) for name, shape in header["layout"]]
    expected = build_layout(hp)
    if stored != expected:
        mismatched = [
            f"{a[0]}{list(a[1])} vs {b[0]}{list(b[1])}"
            for a, b in zip(stored, expected) if a != b
        ]
        detail = ", ".join(mismatched) if mismatched else f"{len(stored)} vs {len(expected)} tensors"
        raise CheckpointError(f"{path}: layout does not match the configured model ({detail})")

    with open(path, "rb") as handle:
        handle.seek(offset)
        payload = handle.read()
    total = sum(int(np.prod(shape)) for _, shape in stored)
    if len(payload) != 8 * total:
        raise CheckpointError(f"{path}: expected {8 * total} value bytes, found {len(payload)}")

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    tensors = {}
    start = 0
    for name, shape in stored:
        size = int(np.prod(shape))
        tensors[name] = values[start:start + size].reshape(shape).copy()
        start += size

    logger.info(
        "Checkpoint loaded",
        extra={"event_type": "checkpoint.loaded", "path": path, "layout_digest": header.get("layout_digest")}
    )
    return ModelParams(hp, tensors)


def checkpoint_hyperparams(path: str) -> HyperParams:
    """Hyperparameters recorded in the checkpoint header."""
    header, _ = read_header(path)
    return HyperParams(**header["hyperparams"])


def checkpoint_seed(path: str) -> Optional[int]:
    """Run seed recorded in the checkpoint header, None for checkpoints saved without one."""
    header, _ = read_header(path)
    seed = header.get("seed")
    return None if seed is None else int(seed)
