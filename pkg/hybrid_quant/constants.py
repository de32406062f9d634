"""
Constants for the hybrid-grained quantized retrieval engine.

Centralizes magic numbers, file magics and default values for maintainability.
"""

# Engine defaults
DEFAULT_EMBEDDING_DIM = 512  # D
DEFAULT_TEXT_TOKEN_DIM = 768  # Dt, BERT-base sized text tokens
DEFAULT_SUBCODEBOOKS = 32  # M
DEFAULT_CODEWORDS = 256  # K, one byte per index
DEFAULT_ACTIVE_CLUSTERS = 7  # L
DEFAULT_EXPERTS = 7  # N_E
DEFAULT_ALPHA = 1.0
DEFAULT_TAU = 0.05
DEFAULT_LEARNING_RATE = 5e-5
DEFAULT_LR_DECAY_EVERY_STEPS = 1000
DEFAULT_LR_DECAY_FACTOR = 0.95
DEFAULT_BATCH_SIZE = 128

# Preset used by the command line when neither --preset nor a config file picks one
DEFAULT_CLI_PRESET = "desk"

# Level selection for the objective and the deployed similarity
LEVELS_HYBRID = "hybrid"
LEVELS_COARSE = "coarse"
LEVELS_FINE = "fine"
LEVEL_CHOICES = (LEVELS_HYBRID, LEVELS_COARSE, LEVELS_FINE)

# Numerical guards
NORM_EPSILON = 1e-12
BATCHNORM_MOMENTUM = 0.1
BATCHNORM_EPSILON = 1e-5

# Trainer defaults
DEFAULT_MAX_EPOCHS = 10
DEFAULT_PATIENCE = 3
DEFAULT_VAL_FRACTION = 0.1
DEFAULT_CHECKPOINT_EVERY_EPOCHS = 1

# Binary artifacts (all little-endian)
CHECKPOINT_MAGIC = b"HQCKPT01"
CHECKPOINT_VERSION = 1
CODE_FILE_MAGIC = b"HQCODES1"
CODE_FILE_VERSION = 1
FEATURE_FILE_MAGIC = b"HQFEAT01"
FEATURE_FILE_VERSION = 1

# Search / benchmarking
DEFAULT_TOP_K = 10
DEFAULT_BENCH_REPETITIONS = 5

# Post-compression baseline
POSTHOC_KMEANS_ITERATIONS = 50
POSTHOC_KMEANS_INITS = 1
RECALL_CUTOFFS = (1, 5, 10, 50)

# Temporal
TEMPORAL_UI_BASE_URL = "http://localhost:8233"
DEFAULT_TASK_QUEUE = "hybrid-quant-pipeline"
WORKFLOW_ID_PREFIX_PIPELINE = "hybrid-quant-pipeline"

# Timeouts (in seconds)
TRAIN_TIMEOUT_SECONDS = 6 * 60 * 60  # 6 hours
ENCODE_TIMEOUT_SECONDS = 30 * 60  # 30 minutes
EVALUATE_TIMEOUT_SECONDS = 30 * 60
METRICS_TIMEOUT_SECONDS = 60  # 1 minute

# Retry policy defaults
RETRY_INITIAL_INTERVAL_SECONDS = 2
RETRY_BACKOFF_COEFFICIENT = 2.0
RETRY_MAX_ATTEMPTS = 3
RETRY_MAX_INTERVAL_SECONDS = 60
