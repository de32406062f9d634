"""
Data models for the hybrid-grained quantized retrieval engine.

Plain dataclasses for engine inputs/outputs, reports, and the records passed
between pipeline workflow and activities.
"""

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional

import numpy as np
from dataclasses_json import dataclass_json

from .errors import DimensionError


class View(str, Enum):
    """Which side of a matched pair an instance belongs to."""
    QUERY = "query"  # texts
    ITEM = "item"  # database items (videos)

    @property
    def other(self) -> "View":
        return View.ITEM if self is View.QUERY else View.QUERY


@dataclass(frozen=True)
class Level:
    """Representation level: 0 is Coarse, l in 1..L is Fine(l)."""
    index: int

    @classmethod
    def coarse(cls) -> "Level":
        return cls(0)

    @classmethod
    def fine(cls, l: int) -> "Level":
        if l < 1:
            raise ValueError(f"fine levels start at 1, got {l}")
        return cls(l)

    @property
    def is_coarse(self) -> bool:
        return self.index == 0

    @property
    def name(self) -> str:
        return "coarse" if self.is_coarse else f"fine_{self.index}"


def all_levels(L: int) -> list[Level]:
    return [Level.coarse()] + [Level.fine(l) for l in range(1, L + 1)]


def level_names(L: int) -> list[str]:
    return [level.name for level in all_levels(L)]


@dataclass
class TokenBag:
    """
    Variable-length token embeddings for one instance of one view.

    tokens: (N, dim) with dim = Dt for queries, D for items.
    condensed: (1, Dt) CLS for queries, (N_E, D) AGG tokens for items.
    """
    view: View
    tokens: np.ndarray
    condensed: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.float32)
        self.condensed = np.ascontiguousarray(self.condensed, dtype=np.float32)
        if self.condensed.ndim == 1:
            self.condensed = self.condensed[None, :]
        if self.tokens.ndim != 2 or self.tokens.shape[0] == 0:
            raise DimensionError(f"bag {self.id}: tokens must be a non-empty (N, dim) array")
        if self.condensed.ndim != 2 or self.condensed.shape[0] == 0:
            raise DimensionError(f"bag {self.id}: condensed tokens must be a non-empty 2-D array")
        if self.condensed.shape[1] != self.tokens.shape[1]:
            raise DimensionError(
                f"bag {self.id}: condensed dim {self.condensed.shape[1]} "
                f"!= token dim {self.tokens.shape[1]}"
            )
        if not (np.isfinite(self.tokens).all() and np.isfinite(self.condensed).all()):
            raise DimensionError(f"bag {self.id}: non-finite token values")

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    def check_dims(self, token_dim: int, condensed_count: int) -> None:
        """Raise DimensionError unless the bag matches the expected layout."""
        if self.dim != token_dim:
            raise DimensionError(
                f"{self.view.value} bag {self.id}: token dim {self.dim}, expected {token_dim}"
            )
        if self.condensed.shape[0] != condensed_count:
            raise DimensionError(
                f"{self.view.value} bag {self.id}: {self.condensed.shape[0]} condensed "
                f"tokens, expected {condensed_count}"
            )


@dataclass
class LevelEmbedding:
    """One D-dim vector at a named level for one instance."""
    level: Level
    vector: np.ndarray


@dataclass
class HardCode:
    """Compact code of one instance: (L+1, M) codeword indices."""
    indices: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.indices.shape[0]

    def level(self, level: Level) -> np.ndarray:
        return self.indices[level.index]


@dataclass
class SearchHit:
    """One ranked search result."""
    rank: int
    id: int
    score: float


@dataclass_json
@dataclass
class EvalReport:
    """Retrieval quality for one direction."""
    direction: str
    r1: float
    r5: float
    r10: float
    r50: float
    median_rank: float
    geometric_mean: float
    num_queries: int
    mean_query_seconds: float = 0.0
    storage_bytes_per_item: int = 0
    threads: int = 1


@dataclass_json
@dataclass
class BenchReport:
    """Query latency and storage for one index and query set."""
    mean_total_seconds: float
    mean_encode_seconds: float
    mean_scan_seconds: float
    repetitions: int
    num_queries: int
    database_size: int
    storage_bytes_per_item: int
    threads: int


@dataclass
class StepResult:
    """Outcome of one optimizer step."""
    step: int
    lr: float
    loss: float
    level_losses: dict[str, float] = field(default_factory=dict)


# Pipeline records (workflow <-> activities); primitives only.

@dataclass
class TrainRequest:
    """Input for the training activity."""
    query_features: str
    item_features: str
    checkpoint_path: str
    config_path: Optional[str] = None
    preset: Optional[str] = None
    log_path: Optional[str] = None
    seed: Optional[int] = None


@dataclass
class TrainOutcome:
    """Result of the training activity."""
    checkpoint_path: str
    steps: int
    epochs: int
    final_loss: float
    best_val_r1: Optional[float] = None


@dataclass
class EncodeRequest:
    """Input for the encoding activity."""
    checkpoint_path: str
    item_features: str
    code_path: str


@dataclass
class EncodeOutcome:
    """Result of the encoding activity."""
    code_path: str
    items: int
    bytes_per_item: int


@dataclass
class EvaluateRequest:
    """Input for the evaluation activity."""
    checkpoint_path: str
    code_path: str
    query_features: str
    item_features: str
    threads: int = 1


@dataclass
class PipelineRequest:
    """Input for the train -> encode -> evaluate workflow."""
    query_features: str
    item_features: str
    workdir: str
    config_path: Optional[str] = None
    preset: Optional[str] = None
    seed: Optional[int] = None
    threads: int = 1


@dataclass
class PipelineState:
    """Current state of a pipeline workflow."""
    current_stage: str = "initializing"
    checkpoint_path: Optional[str] = None
    code_path: Optional[str] = None
    reports: list[dict] = field(default_factory=list)


@dataclass
class RunMetrics:
    """Metrics record for one pipeline stage."""
    stage: str
    duration_ms: int = 0
    details: dict = field(default_factory=dict)
    error: Optional[str] = None
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())
