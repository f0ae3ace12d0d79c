"""Conditioned subordinators and their verification toolkit.

Modules
-------
models        subordinator families, exact path sampling, stream-keyed RNG
potential     renewal / q-potential functions and the potential density
conditioning  the strip law (stay below a barrier) and the hit law
lamperti      self-similar picture: Laplace exponents, time change, tilts
lastpassage   Markov chains conditioned to avoid the origin after a fixed time
ladderbox     Brownian supremum conditioned into a time-space box
verify        statistical test helpers and q->0 extrapolation
cli           command-line front end
"""

from .models import (Family, JumpLaw, PathSample, RngStream, SubordinatorSpec,
                     laplace_exponent, sample_path, sample_stable_increment)

__all__ = [
    "Family", "JumpLaw", "PathSample", "RngStream", "SubordinatorSpec",
    "laplace_exponent", "sample_path", "sample_stable_increment",
]

__version__ = "0.1.0"
