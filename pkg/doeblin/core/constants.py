"""
Numerical tolerances, size caps and CLI constants
"""

from enum import Enum

# Tolerances shared by the oracles and the tests
MASS_TOL = 1e-12  # |Σ probs − 1| and row sums
FIXED_POINT_TOL = 1e-10  # stationary residuals
BOUND_TOL = 1e-8  # approximation gap vs bound proxy
TAIL_MASS = 1e-10  # neglected geometric tail in the bound proxy
FD_STEP = 1e-5  # central finite differences

# Dense oracles refuse state spaces larger than this
DENSE_STATE_CAP = 4096

# Reference distribution floor
REFERENCE_FLOOR = 1e-6

# Effective sample size below this fraction of M is reported as degenerate
ESS_DEGENERACY_FRACTION = 0.01

# Divergence guard on |θ|
THETA_LIMIT = 50.0

# Synthetic task label written into run metadata
TASK_LABEL = "synthetic-teacher-student"


class Topology(str, Enum):
    """Named pairwise graph layouts"""

    CHAIN = "chain"
    GRID = "grid"
    CUSTOM = "custom"


class ReferenceKind(str, Enum):
    """How the restart distribution is obtained"""

    FIT = "fit"
    UNIFORM = "uniform"
    EXPLICIT = "explicit"


class ExitCode(int, Enum):
    """Process exit codes of the CLI"""

    OK = 0
    INVALID_CONFIG = 2
    SIZE_CAP = 3
    DIVERGENCE = 4


# RNG purpose tags used by the seeding contract
class StreamTag(str, Enum):
    TEACHER_THETA = "teacher-theta"
    GEN_TRAIN = "gen-train"
    GEN_HELDOUT = "gen-heldout"
    MINIBATCH = "minibatch"
    PARTICLES = "particles"
    AUDIT = "contraction-audit"
    BENCH = "bench"
