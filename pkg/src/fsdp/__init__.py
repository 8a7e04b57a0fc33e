"""Finite-state dynamic programming toolkit.

Subpackages cover spectral/matrix primitives, fixed-point solvers,
finite Markov chains, state-dependent discounting and asset pricing,
recursive-preference valuation, MDP/RDP optimization, continuous-time
MDPs, a model zoo, and a batch CLI.
"""

from . import (  # noqa: F401
    ctmdp,
    discounting,
    dp,
    fixed_point,
    koopmans,
    markov,
    models,
    rdp,
    spectral,
)
from .errors import (  # noqa: F401
    ConvergenceError,
    SingularJacobianError,
    SpectralRadiusError,
    StabilityError,
)

__version__ = "0.1.0"
