"""
Default settings for the Poisson Brownian isolation / detection simulator.
Values here are fallbacks; experiment TOML files and CLI flags override them.
"""

# --- Model defaults ---

DEFAULT_DIMENSION = 2
DEFAULT_INTENSITY = 1.0       # nodes per unit volume
DEFAULT_RADIUS = 1.0          # detection radius r
DEFAULT_HORIZON = 10.0        # simulation horizon t
DEFAULT_SET_BOUND = 0.0       # sup |g(s)| of the target, 0 = stays put

# --- Time discretization ---

DEFAULT_STEP = 0.02           # base time step h of the knot grid
DEFAULT_REFINE_DEPTH = 8      # max bisections of an uncertain segment

# --- Truncation of the infinite process ---

DEFAULT_TRUNC_EPS = 1e-3      # expected detecting nodes born outside B(0,R)
TRUNC_GRID_STEP = 0.25        # R is returned on the grid set_bound + r + k*step
TRUNC_MAX_GRID_POINTS = 1 << 20

# Bounding ball for sausage estimation uses this (volume-units) budget
SAUSAGE_TRUNC_EPS = 1e-4
TRUNCATION_CHECK_RUNS = 100   # shell runs per isolation/detection experiment, 0 disables

# --- Error budget and uncertain segments ---

# Per-world probability that some envelope verdict is wrong.
# Split evenly over (node, segment) pairs.
DEFAULT_ERROR_BUDGET = 1e-4

# "cover": unresolved segments count as the node being in the set
# "miss": unresolved segments count as the node being outside
DEFAULT_UNCERTAIN_POLICY = "cover"
UNCERTAIN_POLICIES = ("cover", "miss")
LATERAL_BUDGETS = (0.1, 0.03, 0.01, 3e-3, 1e-3)   # lateral escape budgets tried by the ball hit lower bound

# --- Estimation ---

CI_LEVEL = 0.95
SPLITTING_SWITCH_P = 1e-3     # direct estimates below this get splitting
SPLITTING_DEFAULT_LEVELS = 6
SPLITTING_DEFAULT_EFFORT = 2000

# Nodes per generated chunk (bounds peak memory of a world)
WORLD_CHUNK_NODES = 1024

# Paths are first drawn on this coarser step, screened against the
# target reach, and only survivors are filled in to the base step
COARSE_STEP = 1.0

# Sausage / occupation samples per seed block (shards split on blocks)
SAMPLE_BLOCK = 1000

DEFAULT_SAMPLES = 10_000
DEFAULT_MASTER_SEED = 20130917

# --- Occupation tail report ---

OCC_TAIL_LEVELS = (1, 2, 3, 4, 5, 6)
OCC_TAIL_SCALE = 1.0          # thresholds are m * scale * Psi_d(t), kept while below t
OCC_MAX_REJECTION_RATE = 0.999
OCC_IDENTITY_WORLDS = 200     # worlds for the mean total occupation check

# --- d=1 coverage probe ---

PROBE_TIME_FACTOR = 1.5       # s = 1.5 t
PROBE_WINDOW = 1.0            # cover the origin throughout [s, s+1]
PROBE_SERIES_TERMS = 200

# --- Statistical suite thresholds ---

SUITE_SOFT_SIGMA = 3.0
SUITE_HARD_SIGMA = 5.0

# --- Exit codes ---

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SUITE_FAILURE = 3
EXIT_USAGE = 64
EXIT_INTERRUPTED = 130

LOG_LEVEL = "INFO"

# --- Output files ---

CSV_SCHEMA_VERSION = 1
SURVIVAL_CSV = "survival.csv"
SAUSAGE_CSV = "sausage.csv"
STRATEGY_CSV = "strategy.csv"
REARRANGEMENT_CSV = "rearrangement.csv"
PROBE_CSV = "probe_d1.csv"
OCCUPATION_CSV = "occupation_tail.csv"
FIT_JSON = "fit.json"
FIT_MANIFEST_JSON = "fit_manifest.json"
SUMMARY_JSON = "summary.json"
MANIFEST_JSON = "manifest.json"
PLOT_SVG = "plot.svg"
CLOUD_CSV = "world0_cloud.csv"
PATHS_CSV = "world0_paths.csv"
DEFAULT_OUT_DIR = "runs"
