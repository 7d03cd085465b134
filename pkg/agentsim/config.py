"""config.py : Defaults for the agent-workflow scheduling simulator.

Every number the simulator, the policies and the experiment presets fall back on lives
here. The resolved, validated configuration is built in ``agentsim.settings``.
"""

# TIME
US_PER_MS = 1_000
EPOCH_MS = 100  # scheduling epoch for loads, AFS allocation, stealing
DEFAULT_HORIZON_MS = 2 * 60 * 60 * 1_000  # 2 simulated hours
DEFAULT_WARMUP_MS = 3 * 60 * 1_000  # excluded from steady-state metrics in experiments
MIN_PHASE_US = 1  # every prefill/decode/tool phase lasts at least this long


# COST MODEL
PREFILL_RATE = 5_000.0  # tokens/s
DECODE_RATE = 30.0  # tokens/s per request
BYTES_PER_TOKEN = 350_617  # 10.7 GiB of KV for a 32K context
MAX_CONTEXT_TOKENS = 32_768  # sliding context cap per session


# CLUSTER
NUM_WORKERS = 4
LANES_PER_WORKER = 16  # concurrent steps per worker sharing one KV pool
KV_CAPACITY_GB = 80.0  # per worker, GiB
LOAD_WINDOW_MS = 10_000  # queued work normalizer for load(w)


# WA-LRU
ALPHA = 0.3  # recency weight
BETA = 0.5  # (1 - reuse probability) weight
GAMMA = 0.2  # size weight
PREFIX_FRACTION = 0.25  # share of each prompt held as a global prefix under wa-lru and prefix-lru


# TTL
TTL_PERCENTILE = 95.0
TTL_MAX_MS = 300_000
PRESSURE_LOW = 0.7
PRESSURE_HIGH = 0.9
TTL_WINDOW = 256  # latency samples kept per tool type
EMA_SMOOTHING = 0.2  # observation-length and latency-moment EMAs


# ROUTING / STEALING
THETA = 0.8  # affinity load threshold
T_IDLE_MS = 100
R_MAX = 2.0
MIGRATE_MEAN_MS = 230.0
MIGRATE_P95_MS = 890.0
MIGRATE_BANDWIDTH_GBPS = 25.0  # only for the bandwidth migration model
MIGRATE_FIXED_MS = 5.0


# FAIRNESS
SLO_FACTOR = 1.5
BLOCK_THRESHOLD_MS = 500


# AEG
THETA_CONF = 0.7
COLD_START_TASKS = 30
DEFAULT_OBS_TOKENS = 1_000  # observation estimate before any EMA sample


# TOOLS: (P50 ms, P95 ms, P99 ms) per tool class
TOOL_LATENCY_TABLE = {
    "code_execution": (180.0, 2_400.0, 28_000.0),
    "file_ops": (45.0, 320.0, 1_200.0),
    "web_api": (850.0, 4_500.0, 45_000.0),
    "database": (120.0, 890.0, 3_500.0),
}
TOOL_NAMES = tuple(sorted(TOOL_LATENCY_TABLE))


# WORKLOADS
SWEBENCH_MEAN_STEPS = 37
SWEBENCH_MAX_STEPS = 150
SWEBENCH_PROMPT = (2_000, 4_000)
SWEBENCH_OUTPUT = (100, 500)

WEBARENA_MEAN_STEPS = 18
WEBARENA_MAX_STEPS = 60
WEBARENA_PROMPT = (4_000, 8_000)
WEBARENA_OUTPUT = (50, 200)

SINGLE_TENANT_RATE = 8.0  # tasks/min

# class -> (tenant count, steps per task, tasks/min/tenant)
MULTITENANT_CLASSES = {
    "heavy": (3, 100, 16.0),
    "medium": (4, 30, 8.0),
    "light": (3, 10, 4.0),
}
MULTITENANT_PROMPT = (1_000, 3_000)
MULTITENANT_OUTPUT = (50, 300)


# EXPERIMENTS
DEFAULT_SEEDS = 10
EXPERIMENT_HORIZON_MS = 20 * 60 * 1_000  # desk-scale run length
CONTENDED_RATE_SCALE = 0.75  # single-tenant presets: busy but admissible
FAIRNESS_RATE_SCALE = 0.05  # multi-tenant presets, cluster sized to the target load
FAIRNESS_TARGET_LOAD = 1.5  # oversubscribed
FAIRNESS_LANES_PER_WORKER = 4
PATTERN_TRAIN_TASKS = 100
PATTERN_HOLDOUT_TASKS = 30
IQR_FACTOR = 1.5
SIGNIFICANCE_LEVELS = (0.05, 0.01, 0.001)
TOOL_VARIANCE_MEAN_MS = 1_200.0
TOOL_VARIANCE_CVS = (0.5, 1.0, 1.5, 2.0, 3.0)
RATIO_CAPACITY_FRACTION = 0.5  # of peak working set
STRATEGY_BATCH_TASKS = 64  # submitted together; throughput is tasks over makespan
STRATEGY_TOOL_MEAN_MS = 30_000.0  # tool waits dwarf step compute
STRATEGY_KV_CAPACITY_GB = 16.0
STRATEGY_MAX_CONTEXT_TOKENS = 8_192


# LOGGING
LOG_ENV_VAR = "AGENTSIM_LOG"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
