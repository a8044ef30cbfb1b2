"""
Parameter and gradient containers.

ModelParams holds every named matrix of the news and user encoders in a
fixed layout order. GradientSet mirrors that layout, keeping the word
embedding gradient as sorted (row, vector) pairs because a client only
touches the rows of words it has seen.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..core.errors import DataError, ProtocolError, ShapeError
from ..core.models import HyperParams
from ..nn.primitives import GruWeights
from ..nn.rng import RngState
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

EMBEDDING = "word_embeddings"

Layout = List[Tuple[str, Tuple[int, ...]]]

_GRU_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def build_layout(hp: HyperParams) -> Layout:
    """Ordered (name, shape) list of every parameter, embedding first."""
    V = hp.require_vocab()
    e, f, w = hp.word_embed_dim, hp.cnn_filters, hp.cnn_window
    heads, dh, q, D, d = hp.num_heads, hp.head_dim, hp.attn_query_dim, hp.news_dim, hp.gru_units
    return [
        (EMBEDDING, (V, e)),
        ("news_cnn_weight", (f, w * e)),
        ("news_cnn_bias", (f,)),
        ("news_attn_query", (heads, f, dh)),
        ("news_attn_key", (heads, f, dh)),
        ("news_attn_value", (heads, f, dh)),
        ("news_pool_proj", (D, q)),
        ("news_pool_query", (q,)),
        ("user_attn_query", (heads, D, dh)),
        ("user_attn_key", (heads, D, dh)),
        ("user_attn_value", (heads, D, dh)),
        ("user_pool_proj", (D, q)),
        ("user_pool_query", (q,)),
        ("gru_W_z", (d, D)),
        ("gru_U_z", (d, d)),
        ("gru_b_z", (d,)),
        ("gru_W_r", (d, D)),
        ("gru_U_r", (d, d)),
        ("gru_b_r", (d,)),
        ("gru_W_h", (d, D)),
        ("gru_U_h", (d, d)),
        ("gru_b_h", (d,)),
        ("combiner_proj", (D, q)),
        ("combiner_query", (q,)),
    ]


def parameter_count(hp: HyperParams) -> Dict[str, int]:
    """Embedding and non-embedding parameter counts for the given hyperparameters."""
    counts = {"embedding": 0, "dense": 0}
    for name, shape in build_layout(hp):
        size = int(np.prod(shape))
        counts["embedding" if name == EMBEDDING else "dense"] += size
    return counts


@dataclass
class ModelParams:
    hp: HyperParams
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        expected = build_layout(self.hp)
        actual = [(name, tuple(value.shape)) for name, value in self.tensors.items()]
        if actual != expected:
            raise ShapeError(f"parameter layout mismatch: expected {expected}, got {actual}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @classmethod
    def zeros(cls, hp: HyperParams) -> "ModelParams":
        return cls(hp, {name: np.zeros(shape) for name, shape in build_layout(hp)})

    @classmethod
    def initialize(cls, hp: HyperParams, rng: RngState) -> "ModelParams":
        """Glorot-uniform matrices, zero biases, uniform(-0.1, 0.1) embeddings."""
        tensors: Dict[str, np.ndarray] = {}
        for name, shape in build_layout(hp):
            gen = rng.split(name).generator()
            if name == EMBEDDING:
                tensors[name] = gen.uniform(-0.1, 0.1, size=shape)
            elif len(shape) == 1:
                tensors[name] = np.zeros(shape)
            else:
                fan_in, fan_out = shape[-2], shape[-1]
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                tensors[name] = gen.uniform(-limit, limit, size=shape)
        return cls(hp, tensors)

    def layout(self) -> Layout:
        return [(name, tuple(value.shape)) for name, value in self.tensors.items()]

    def dense_names(self) -> List[str]:
        return [name for name in self.tensors if name != EMBEDDING]

    def gru(self) -> GruWeights:
        return GruWeights(*(self.tensors[f"gru_{n}"] for n in _GRU_NAMES))

    def copy(self) -> "ModelParams":
        return ModelParams(self.hp, {name: value.copy() for name, value in self.tensors.items()})

    def with_hp(self, hp: HyperParams) -> "ModelParams":
        """Same tensors under different (layout-compatible) hyperparameters."""
        return ModelParams(hp, self.tensors)

    def apply_gradient(self, grad: "GradientSet", learning_rate: float) -> "ModelParams":
        """Θ' = Θ − η·g; the receiver is left untouched."""
        grad.check_layout(self)
        updated = {}
        for name, value in self.tensors.items():
            if name == EMBEDDING:
                table = value.copy()
                if grad.embedding_rows.size:
                    table[grad.embedding_rows] = table[grad.embedding_rows] - learning_rate * grad.embedding_values
                updated[name] = table
            else:
                updated[name] = value - learning_rate * grad.dense[name]
        return ModelParams(self.hp, updated)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.tensors.values())


def load_pretrained_embeddings(params: ModelParams, path: str, vocabulary: Dict[str, int]) -> Tuple[ModelParams, int]:
    """Overwrite embedding rows of words found in a `word v1 v2 ...` text file.

    Returns the new parameters and the number of rows replaced; unmatched
    vocabulary rows keep their random initialisation.
    """
    table = params[EMBEDDING].copy()
    dim = table.shape[1]
    matched = 0
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            row = vocabulary.get(parts[0])
            if row is None:
                continue
            if len(parts) - 1 != dim:
                raise DataError(
                    f"{path}:{line_number}: embedding for '{parts[0]}' has {len(parts) - 1} values, expected {dim}"
                )
            table[row] = np.array([float(v) for v in parts[1:]])
            matched += 1
    tensors = dict(params.tensors)
    tensors[EMBEDDING] = table
    logger.info(
        f"Loaded {matched} pre-trained embedding rows",
        extra={"event_type": "model.embeddings_loaded", "path": path, "matched": matched, "vocab": len(vocabulary)}
    )
    return ModelParams(params.hp, tensors), matched


@dataclass
class GradientSet:
    dense: Dict[str, np.ndarray]
    embedding_rows: np.ndarray
    embedding_values: np.ndarray
    vocab_size: int
    sample_weight: int = 1
    owner: str = ""
    loss: Optional[float] = None

    def __post_init__(self):
        self.embedding_rows = np.asarray(self.embedding_rows, dtype=np.int64)
        if self.embedding_values.ndim != 2 or self.embedding_values.shape[0] != self.embedding_rows.size:
            raise ShapeError(
                f"sparse embedding part has {self.embedding_rows.size} rows but values of shape "
                f"{self.embedding_values.shape}"
            )
        if self.embedding_rows.size and np.any(np.diff(self.embedding_rows) <= 0):
            raise ShapeError("sparse embedding rows must be strictly increasing")

    @property
    def embedding_dim(self) -> int:
        return self.embedding_values.shape[1]

    @classmethod
    def zeros_like(cls, params: ModelParams, sample_weight: int = 1, owner: str = "") -> "GradientSet":
        table = params[EMBEDDING]
        return cls(
            dense={name: np.zeros_like(params[name]) for name in params.dense_names()},
            embedding_rows=np.zeros(0, dtype=np.int64),
            embedding_values=np.zeros((0, table.shape[1])),
            vocab_size=table.shape[0],
            sample_weight=sample_weight,
            owner=owner,
        )

    @classmethod
    def from_row_updates(
        cls,
        dense: Dict[str, np.ndarray],
        rows: Iterable[int],
        row_grads: Iterable[np.ndarray],
        vocab_size: int,
        embedding_dim: int,
        **kwargs,
    ) -> "GradientSet":
        """Sum possibly repeated (row, vector) contributions in the order given."""
        rows = np.asarray(list(rows), dtype=np.int64)
        values = [np.asarray(v, dtype=np.float64) for v in row_grads]
        if rows.size == 0:
            return cls(dense, rows, np.zeros((0, embedding_dim)), vocab_size, **kwargs)
        unique, inverse = np.unique(rows, return_inverse=True)
        summed = np.zeros((unique.size, embedding_dim))
        # add.at applies contributions sequentially in input order
        np.add.at(summed, inverse, np.stack(values))
        return cls(dense, unique, summed, vocab_size, **kwargs)

    def layout(self) -> Layout:
        return [(EMBEDDING, (self.vocab_size, self.embedding_dim))] + [
            (name, tuple(value.shape)) for name, value in self.dense.items()
        ]

    def check_layout(self, params: ModelParams) -> None:
        if self.layout() != params.layout():
            raise ProtocolError(f"gradient layout {self.layout()} does not match model layout {params.layout()}")

    def embedding_dense(self) -> np.ndarray:
        table = np.zeros((self.vocab_size, self.embedding_dim))
        if self.embedding_rows.size:
            table[self.embedding_rows] = self.embedding_values
        return table

    def densify_embedding(self) -> "GradientSet":
        """Same gradient with every embedding row present (absent rows as zeros)."""
        return self.replace(
            embedding_rows=np.arange(self.vocab_size, dtype=np.int64),
            embedding_values=self.embedding_dense(),
        )

    def map_values(self, fn: Callable[[np.ndarray], np.ndarray]) -> "GradientSet":
        """Apply `fn` to every stored array (dense tensors and present embedding rows)."""
        return self.replace(
            dense={name: fn(value) for name, value in self.dense.items()},
            embedding_values=fn(self.embedding_values),
        )

    def replace(self, **changes) -> "GradientSet":
        values = dict(
            dense=self.dense,
            embedding_rows=self.embedding_rows,
            embedding_values=self.embedding_values,
            vocab_size=self.vocab_size,
            sample_weight=self.sample_weight,
            owner=self.owner,
            loss=self.loss,
        )
        values.update(changes)
        return GradientSet(**values)

    def values(self) -> List[np.ndarray]:
        """Stored arrays in layout order."""
        return [self.embedding_values] + list(self.dense.values())

    def flat(self) -> np.ndarray:
        """All coordinates of the full layout (embedding densified) as one vector."""
        return np.concatenate([self.embedding_dense().ravel()] + [v.ravel() for v in self.dense.values()])

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.values() if v.size), default=0.0)
