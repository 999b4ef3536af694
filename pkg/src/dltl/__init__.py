"""Numerical laboratory for deep-learning theory.

Closed-form calculators and their Monte Carlo cross-checks for wide-network
phenomenology: signal-propagation phase diagrams, free-probabilistic Jacobian
spectra, deep linear training dynamics, loss-landscape connectivity paths,
neural-tangent-kernel machinery, Wick/diagram combinatorics for correlation
functions, and generalization-bound calculators.

Every analytic prediction exposed here is paired with a simulation or
brute-force oracle in the test suite; the modules themselves only ship the
formulas and the simulators.
"""

import os as _os

# DLTL_THREADS caps numeric parallelism. The BLAS pools read these variables
# when numpy first loads, so they must be set here, before any submodule
# import pulls numpy in; explicit user settings win via setdefault.
_threads = _os.environ.get("DLTL_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

__version__ = "0.1.0"

__all__ = [
    "netcore",
    "meanfield",
    "spectra",
    "lindyn",
    "landscape",
    "ntk",
    "wick",
    "genbounds",
]
