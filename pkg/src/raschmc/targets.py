"""Small analytic targets with the kernel calling convention ``f(q, args) -> (lp, grad)``.

Used for sampler checks; compiled on the numba backend like the model kernels.
"""

import numpy as np

from ._accel import njit


@njit
def std_normal(q, args):
    return -0.5 * np.dot(q, q), -q


@njit
def gaussian(q, args):
    """``args = (mean, precision)`` for a dense multivariate normal."""
    mean, prec = args
    d = q - mean
    g = -(prec @ d)
    return 0.5 * np.dot(d, g), g


@njit
def flat(q, args):
    return 0.0, np.zeros_like(q)
