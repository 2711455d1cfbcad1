"""Constants for the wave positivity laboratory."""

from typing import Final

CLI_NAME = "wavepos"

# Configuration
ENV_PREFIX: Final = "WAVEPOS_"
REPORT_SCHEMA_VERSION: Final = 1
REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"
FLOAT_DIGITS = 12  # significant digits in JSON reports

# Exit codes
EXIT_OK = 0
EXIT_SYNTHESIS_FAILURE = 1
EXIT_CONFIG_ERROR = 2

# Spectral checks
TOL_FREDHOLM = 1e-8  # absolute, on eigenvalues
TOL_EIGEN_RESIDUAL = 1e-10  # relative to the largest eigenvalue
SERIES_THRESHOLD = 1e-2  # |lambda| * dt**2 below this uses Taylor kernels
SERIES_TERMS = 10

# Controllability
MODE_CUT_DIVISOR = 8  # default M = n / 8
SVD_CUTOFF = 1e-10  # relative
TOL_REACH = 1e-8  # relative residual on retained modes
TOL_FULL = 1e-4  # full-space error of a link over 1 + ||target||
TOL_FEAS_REL = 1e-6
TOL_FEAS_ABS = 1e-10
NNLS_ITER_FACTOR = 10  # iteration cap = factor * unknowns
DEFAULT_SMOOTHNESS = 1
NODE_SNAP = 1e-9
GAIN_CHUNK = 256  # time samples per block when bounding the control gain

# Staircase
DEFAULT_T0 = 2.5
N0_CAP = 2**14
STATE_MARGIN_SHARE = 0.5  # hop states stay within this share of sigma
TOL_NONNEG = 0.0
TOL_STATE_WAYPOINT = -1e-12
TOL_STAIRCASE_FINAL = 1e-6  # relative final error of a synthesized staircase

# Trajectory linking
DEFAULT_SIGMA = 1.0
BUMP_ANCHOR = 0.5

# Minimal time
TOL_STATE = 1e-8
BISECT_UNCERTAINTY_STEPS = 2

# Smooth profiles
RHO_WIDTH = 0.45  # rho falls from 1 to 0 on [0, RHO_WIDTH]
ZETA_WIDTH = 0.45  # zeta falls from 1 to 0 on [1/2, 1/2 + ZETA_WIDTH]

# Exact d'Alembert scan
PROP51_LATTICE = 1001
