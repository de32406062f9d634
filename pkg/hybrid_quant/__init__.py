"""
Hybrid Quant - hybrid-grained quantized cross-view retrieval.

Learns compact codes for a coarse (global) and L fine (cluster-level)
representation of every instance, trains them jointly with an asymmetric
contrastive objective, and searches databases of compact codes with
per-query lookup tables. Long runs can be orchestrated durably on Temporal.
"""

__version__ = "0.1.0"

# Models
from .models import (
    View,
    Level,
    TokenBag,
    LevelEmbedding,
    HardCode,
    SearchHit,
    EvalReport,
    BenchReport,
    StepResult,
    TrainRequest,
    TrainOutcome,
    EncodeRequest,
    EncodeOutcome,
    EvaluateRequest,
    PipelineRequest,
    PipelineState,
    RunMetrics,
)

# Errors
from .errors import (
    HybridQuantError,
    ConfigError,
    DimensionError,
    DegenerateItemError,
    NonFiniteLossError,
    FormatError,
    StaleIndexError,
    EmptyIndexError,
)

# Configuration
from .config import (
    EngineConfig,
    TrainerConfig,
    TemporalConfig,
    RuntimeConfig,
    ENGINE_PRESETS,
    get_preset,
    build_configs,
    load_engine_config,
    dump_engine_config,
    get_config,
    load_config,
    reset_config,
)

# Engine
from .params import HybridQuantModel, init_parameters
from .checkpoint import read_checkpoint, write_checkpoint
from .objective import aqcl_loss, hybrid_loss, BatchSimilarities
from .trainer import OptimizerState, init_optimizer, train_step, train_loop
from .index import (
    CodeIndex,
    LookupTable,
    encode_database,
    embed_levels,
    build_lookup,
    aqs,
    prepare_index,
    hybrid_search,
    brute_force_search,
    read_code_file,
    write_code_file,
)
from .metrics import recall_at, median_rank, evaluate, evaluate_pairs, bench_query_time
from .posthoc import post_compress, evaluate_post_compressed

# Data
from .features import PairedDataset, read_feature_file, write_feature_file, load_paired
from .synthetic import SyntheticSpec, generate_pairs, write_synthetic

# Constants
from .constants import (
    DEFAULT_TOP_K,
    LEVEL_CHOICES,
    TEMPORAL_UI_BASE_URL,
)

__all__ = [
    # Version
    "__version__",
    # Models
    "View",
    "Level",
    "TokenBag",
    "LevelEmbedding",
    "HardCode",
    "SearchHit",
    "EvalReport",
    "BenchReport",
    "StepResult",
    "TrainRequest",
    "TrainOutcome",
    "EncodeRequest",
    "EncodeOutcome",
    "EvaluateRequest",
    "PipelineRequest",
    "PipelineState",
    "RunMetrics",
    # Errors
    "HybridQuantError",
    "ConfigError",
    "DimensionError",
    "DegenerateItemError",
    "NonFiniteLossError",
    "FormatError",
    "StaleIndexError",
    "EmptyIndexError",
    # Configuration
    "EngineConfig",
    "TrainerConfig",
    "TemporalConfig",
    "RuntimeConfig",
    "ENGINE_PRESETS",
    "get_preset",
    "build_configs",
    "load_engine_config",
    "dump_engine_config",
    "get_config",
    "load_config",
    "reset_config",
    # Engine
    "HybridQuantModel",
    "init_parameters",
    "read_checkpoint",
    "write_checkpoint",
    "aqcl_loss",
    "hybrid_loss",
    "BatchSimilarities",
    "OptimizerState",
    "init_optimizer",
    "train_step",
    "train_loop",
    "CodeIndex",
    "LookupTable",
    "encode_database",
    "embed_levels",
    "build_lookup",
    "aqs",
    "prepare_index",
    "hybrid_search",
    "brute_force_search",
    "read_code_file",
    "write_code_file",
    "recall_at",
    "median_rank",
    "evaluate",
    "evaluate_pairs",
    "bench_query_time",
    "post_compress",
    "evaluate_post_compressed",
    # Data
    "PairedDataset",
    "read_feature_file",
    "write_feature_file",
    "load_paired",
    "SyntheticSpec",
    "generate_pairs",
    "write_synthetic",
    # Constants
    "DEFAULT_TOP_K",
    "LEVEL_CHOICES",
    "TEMPORAL_UI_BASE_URL",
]
