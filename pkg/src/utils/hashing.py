"""
Stable Hashing Utilities
Deterministic digests for checkpoint manifests and rng stream derivation
"""

import hashlib
import json
from typing import Any, Dict, Iterable


def normalize_data(data: Any) -> str:
    """
    Normalize data for deterministic hashing

    Dict keys are sorted recursively; list order is preserved because
    layouts and token sequences are order-sensitive.
    """
    return json.dumps(_sort_recursive(data), separators=(",", ":"))


def _sort_recursive(data: Any) -> Any:
    if isinstance(data, dict):
        return {str(key): _sort_recursive(data[key]) for key in sorted(data, key=str)}
    if isinstance(data, (list, tuple)):
        return [_sort_recursive(item) for item in data]
    return data


def stable_digest(data: Any) -> str:
    """sha256 hex digest of the normalized representation."""
    return hashlib.sha256(normalize_data(data).encode("utf-8")).hexdigest()


def stable_u64(*parts: Any) -> int:
    """64-bit unsigned key derived from the given parts with blake2b."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bytes):
            payload = part
        elif isinstance(part, int):
            payload = part.to_bytes(16, "little", signed=True)
        else:
            payload = str(part).encode("utf-8")
        h.update(len(payload).to_bytes(4, "little"))
        h.update(payload)
    return int.from_bytes(h.digest(), "little", signed=False)


def token_key(tokens: Iterable[int]) -> int:
    """Content key of a token-id sequence."""
    return stable_u64(b"tokens", ",".join(str(int(t)) for t in tokens))


def sequence_key(sequences: Iterable[Iterable[int]]) -> int:
    """Content key of an ordered list of token-id sequences."""
    return stable_u64(b"sequences", "|".join(",".join(str(int(t)) for t in seq) for seq in sequences))


def layout_digest(layout: Iterable[Any]) -> str:
    """Digest of an ordered (name, shape) layout."""
    entries: Dict[str, Any] = {"layout": [[name, list(shape)] for name, shape in layout]}
    return stable_digest(entries)
