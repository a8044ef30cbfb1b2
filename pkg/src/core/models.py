import math
from typing import Any, ClassVar, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ConfigError, UndefinedBudgetError


class PrivacyConfig(BaseModel):
    """Local differential privacy settings: clip scale δ and Laplace noise scale λ"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    clip_scale: float = Field(0.005, ge=0.0, description="Per-coordinate clamp bound δ")
    noise_scale: float = Field(0.015, ge=0.0, description="Laplace scale λ")
    noise_sparse_only: bool = Field(
        False, description="Only noise embedding rows the client touched (weaker privacy)"
    )

    @field_validator("clip_scale", "noise_scale")
    @classmethod
    def _not_nan(cls, value: float) -> float:
        if math.isnan(value):
            raise ValueError("must not be NaN")
        return value

    def budget(self) -> float:
        """Upper bound of the per-upload privacy budget ε = 2δ/λ."""
        if self.noise_scale == 0:
            raise UndefinedBudgetError("privacy budget undefined: noise_scale is 0 (no noise)")
        return 2.0 * self.clip_scale / self.noise_scale

    @property
    def noise_variance(self) -> float:
        return 2.0 * self.noise_scale ** 2

    @property
    def noise_std(self) -> float:
        return self.noise_scale * math.sqrt(2.0)


class HyperParams(BaseModel):
    """Model, optimisation and protocol hyperparameters; defaults follow the published settings"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    word_embed_dim: int = Field(300, ge=1)
    gru_units: int = Field(400, ge=1)
    num_heads: int = Field(20, ge=1)
    head_dim: int = Field(20, ge=1)
    attn_query_dim: int = Field(200, ge=1)
    cnn_window: int = Field(3, ge=1)
    cnn_filters: Optional[int] = Field(None, ge=1)
    title_len: int = Field(30, ge=1)
    history_len: int = Field(50, ge=1)
    negatives_H: int = Field(4, ge=1)
    dropout_rate: float = Field(0.2, ge=0.0, lt=1.0)
    learning_rate: float = Field(0.5, ge=0.0)
    clip_scale: float = Field(0.005, ge=0.0)
    noise_scale: float = Field(0.015, ge=0.0)
    client_fraction: float = Field(0.02, gt=0.0, le=1.0)
    vocab_size: Optional[int] = Field(None, ge=1)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(2, ge=0)
    use_long_term: bool = True
    use_short_term: bool = True

    @field_validator("cnn_window")
    @classmethod
    def _odd_window(cls, value: int) -> int:
        if value % 2 != 1:
            raise ValueError(f"cnn_window must be odd, got {value}")
        return value

    @model_validator(mode="before")
    @classmethod
    def _default_filters(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("cnn_filters") is None:
            data = dict(data)
            heads = int(data.get("num_heads", cls.model_fields["num_heads"].default))
            head_dim = int(data.get("head_dim", cls.model_fields["head_dim"].default))
            data["cnn_filters"] = heads * head_dim
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "HyperParams":
        if self.gru_units != self.news_dim:
            raise ValueError(
                f"gru_units ({self.gru_units}) must equal num_heads*head_dim ({self.news_dim})"
            )
        if not (self.use_long_term or self.use_short_term):
            raise ValueError("at least one of use_long_term / use_short_term must be enabled")
        if math.isnan(self.clip_scale) or math.isnan(self.noise_scale):
            raise ValueError("clip_scale and noise_scale must not be NaN")
        return self

    @property
    def news_dim(self) -> int:
        return self.num_heads * self.head_dim

    def privacy(self, noise_sparse_only: bool = False) -> PrivacyConfig:
        return PrivacyConfig(
            clip_scale=self.clip_scale,
            noise_scale=self.noise_scale,
            noise_sparse_only=noise_sparse_only,
        )

    def require_vocab(self) -> int:
        if self.vocab_size is None:
            raise ConfigError("vocab_size is not set; load a catalog or set it in the config")
        return self.vocab_size

    @classmethod
    def desk(cls, **overrides) -> "HyperParams":
        """Desk-scale dimensions used for synthetic experiments."""
        values = dict(
            word_embed_dim=16,
            gru_units=16,
            num_heads=2,
            head_dim=8,
            attn_query_dim=16,
            cnn_window=3,
            title_len=10,
            history_len=10,
            negatives_H=4,
            client_fraction=0.05,
        )
        values.update(overrides)
        return cls(**values)


class RunConfig(BaseModel):
    """Run-level settings that are not model hyperparameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["federated", "central"] = "federated"
    rounds: int = Field(300, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    eval_every: int = Field(50, ge=1)
    train_user_fraction: float = Field(1.0, gt=0.0, le=1.0)
    max_train_users: Optional[int] = Field(None, ge=1)
    max_samples_per_round: Optional[int] = Field(None, ge=1)
    noise_sparse_only: bool = False
    track_post_loss: bool = False
    embedding_file: Optional[str] = None

    # inputs: explicit files win over data_dir
    data_dir: str = "data"
    news_file: Optional[str] = None
    train_file: Optional[str] = None
    test_file: Optional[str] = None
    test_negatives: int = Field(0, ge=0)

    # outputs
    metrics_out: str = "metrics.csv"
    rounds_out: Optional[str] = None
    model_out: str = "model.ckpt"
    report_out: Optional[str] = None
    report_format: Literal["text", "csv", "json"] = "text"
    sweep_out: str = "sweep.csv"

    # sweep grid; unset axes fall back to the single configured value
    lambdas: Optional[List[float]] = None
    deltas: Optional[List[float]] = None
    seeds: Optional[List[int]] = None

    @field_validator("lambdas", "deltas", "seeds", mode="before")
    @classmethod
    def _comma_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            return items or None
        return value

    @field_validator("seeds")
    @classmethod
    def _seeds_unsigned(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and any(seed < 0 for seed in value):
            raise ValueError(f"seeds must be >= 0, got {value}")
        return value

    @field_validator("lambdas", "deltas")
    @classmethod
    def _scales_non_negative(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(math.isnan(v) or v < 0 for v in value):
            raise ValueError(f"scales must be >= 0, got {value}")
        return value


class SyntheticConfig(BaseModel):
    """Parameters of the synthetic click-log generator"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_users: int = Field(200, ge=1)
    num_news: int = Field(500, ge=1)
    num_topics: int = Field(8, ge=1)
    words_per_topic: int = Field(30, ge=1)
    click_noise: float = Field(0.1, ge=0.0, lt=0.5)
    title_len: int = Field(10, ge=1)
    topics_per_user: int = Field(2, ge=1)
    impressions_per_user: int = Field(10, ge=1)
    candidates_per_impression: int = Field(5, ge=1)
    seed_clicks: int = Field(5, ge=0)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _consistent(self) -> "SyntheticConfig":
        if self.topics_per_user > self.num_topics:
            raise ValueError("topics_per_user cannot exceed num_topics")
        if self.candidates_per_impression > self.num_news:
            raise ValueError("candidates_per_impression cannot exceed num_news")
        return self


class RoundReport(BaseModel):
    """Outcome of one federated round"""
    round_index: int
    participants: List[str] = Field(default_factory=list)
    sample_weight: int = 0
    pre_loss: Optional[float] = None
    post_loss: Optional[float] = None
    wall_time_s: float = 0.0
    skipped: bool = False

    CSV_HEADER: ClassVar[str] = "round,participants,sample_weight,pre_loss,post_loss"

    def to_csv_row(self) -> str:
        return ",".join([
            str(self.round_index),
            str(len(self.participants)),
            str(self.sample_weight),
            _fmt(self.pre_loss),
            _fmt(self.post_loss),
        ])


class MetricsReport(BaseModel):
    """Impression-averaged ranking metrics"""
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    skipped: int = 0
    evaluated: int = 0

    CSV_HEADER: ClassVar[str] = "round,loss,auc,mrr,ndcg5,ndcg10,skipped"

    def to_csv_row(self, round_index: int, loss: Optional[float]) -> str:
        return ",".join([
            str(round_index),
            _fmt(loss),
            _fmt(self.auc),
            _fmt(self.mrr),
            _fmt(self.ndcg5),
            _fmt(self.ndcg10),
            str(self.skipped),
        ])


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    # repr round-trips float64 exactly
    return repr(float(value))
