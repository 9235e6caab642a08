"""Backward-difference state estimators for the integrator chain.

Samples are always ordered newest first: ``(y(0), y(-h), ..., y(-(n-1)h))``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericalFailureError
from .linalg import check_dimension, induced_norm2, invert, nilpotent_exp, vandermonde


def scaling_diagonal(n, h):
    """Diagonal of diag(1, 1!/(-h), 2!/(-h)^2, ..., (n-1)!/(-h)^(n-1))."""
    return np.array([math.factorial(i) / (-h) ** i for i in range(n)])


@dataclass(frozen=True)
class DelayOperator:
    n: int
    h: float
    coeff: np.ndarray

    def __call__(self, samples):
        return apply(self, samples)


def build_delay_operator(n, h):
    n = check_dimension(n)
    h = float(h)
    if not 0.0 < h <= 1.0:
        raise DomainError(f"step h={h} outside (0, 1]")
    coeff = scaling_diagonal(n, h)[:, None] * invert(vandermonde(n))
    coeff.setflags(write=False)
    return DelayOperator(n, h, coeff)


def apply(op, samples):
    """Estimate (y, y', ..., y^(n-1)) at the newest sample time."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (op.n,):
        raise DimensionError(f"expected {op.n} samples, got shape {samples.shape}")
    return op.coeff @ samples


@dataclass(frozen=True)
class EstimatorConstants:
    """Error and boundedness constants of the estimator.

    ``K0`` is the value used downstream (the tightened row-sum bound unless a
    preset overrides it); ``K0_generic`` is the plain proof constant.  ``K``
    holds K_1 ... K_n.
    """

    n: int
    K0: float
    K: tuple
    K0_generic: float
    K0_tight: float

    @property
    def Kn(self):
        return self.K[-1]


def _max_exp_norm(n, grid=1000, tol=1e-6):
    """max over s in [0, n-1] of |exp(As)|.

    The norm is nondecreasing for this nilpotent A; the grid check below
    asserts that instead of assuming it, then a golden-section search
    refines around the best grid point.
    """
    smax = float(n - 1)
    s = np.linspace(0.0, smax, grid)
    vals = np.array([induced_norm2(nilpotent_exp(n, si)) for si in s])
    if np.any(np.diff(vals) < -1e-9 * vals[1:]):
        raise NumericalFailureError("|exp(As)| is not monotone on the sampling grid")
    i = int(np.argmax(vals))
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, grid - 1)]
    f = lambda x: induced_norm2(nilpotent_exp(n, x))  # noqa: E731
    g = (math.sqrt(5.0) - 1.0) / 2.0
    while hi - lo > tol:
        a, b = hi - g * (hi - lo), lo + g * (hi - lo)
        if f(a) >= f(b):
            hi = b
        else:
            lo = a
    return max(vals[i], f(lo), f(hi))


def estimator_constants(n):
    n = check_dimension(n)
    pinv = invert(vandermonde(n))
    fact = math.factorial(n - 1)
    pnorm = induced_norm2(pinv)
    K0_generic = math.sqrt(n) * pnorm * fact
    rowsums = np.abs(pinv).sum(axis=1)
    K0_tight = math.sqrt(n) * float(max(math.factorial(i) * rowsums[i] for i in range(n)))
    emax = _max_exp_norm(n)
    K = tuple(
        float((n - 1) * math.sqrt(n) * pnorm * fact * (n - 1) ** j / math.factorial(j)
        + (n - 1) * emax)
        for j in range(1, n + 1)
    )
    # The row-sum bound is sharper for n >= 3 but not for n = 2.
    return EstimatorConstants(n, min(K0_tight, K0_generic), K, K0_generic, K0_tight)


# Sharper n=3 constants quoted for the three-integrator example.
EXAMPLE31_K0 = 4.0 * math.sqrt(3.0)
EXAMPLE31_K3 = math.sqrt(136.0)


def example31_constants():
    """n=3 constants with K0 = 4*sqrt(3) and K3 = sqrt(136); K1, K2 stay generic."""
    ec = estimator_constants(3)
    return EstimatorConstants(
        3, EXAMPLE31_K0, (ec.K[0], ec.K[1], EXAMPLE31_K3), ec.K0_generic, ec.K0_tight
    )
