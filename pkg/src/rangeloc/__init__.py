"""rangeloc: set-membership localization from beacon range measurements.

Position estimates are centers (Chebyshev or maximum-volume-ellipsoid) of the
intersection of calibrated range balls; poses are recovered from per-receiver
estimates via the orthogonal Procrustes solution.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
