"""Gain certification, step-size conditions and the high-gain scaling design.

The closed-loop constants for the delayed feedback contain a factor of the
form ``exp(2*beta*|k|*K0*(n-1)*h**(2-n))``.  For n >= 3 and certified steps
this overflows double precision; such values are carried as ``inf`` and the
logarithm is reported alongside (``log_Lrem``).
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .delayop import EstimatorConstants, scaling_diagonal
from .errors import (
    DomainError,
    InfeasibleError,
    InvalidBaseStepError,
    InvalidLyapunovError,
    NotStabilizingError,
    NumericalFailureError,
    ScalingTooSmallError,
)
from .linalg import check_dimension, induced_norm2, invert, shift_matrix, vandermonde

VERTEX_TOL = 1e-9
BISECTION_RTOL = 1e-6
H_FLOOR = 1e-12


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class GainCertificate:
    """Robust state-feedback certificate for the integrator chain.

    ``lyap_rate`` is the decay rate of sqrt(x' P x) certified at both sector
    vertices; it is at least ``mu`` and the gap between the two sets the
    disturbance gains ``M``.
    """

    n: int
    k: tuple
    alpha: float
    beta: float
    mu: float
    M0: float
    M: tuple
    lyap: np.ndarray = field(repr=False)
    lyap_rate: float = math.nan

    @property
    def knorm(self):
        return math.sqrt(sum(ki * ki for ki in self.k))

    @property
    def Mn(self):
        return self.M[-1]


def closed_loop_matrix(k, a):
    k = np.asarray(k, dtype=float)
    n = k.size
    acl = shift_matrix(n)
    acl[-1, :] += a * k
    return acl


def _cholesky(lyap):
    try:
        return np.linalg.cholesky(lyap)
    except np.linalg.LinAlgError as exc:
        raise InvalidLyapunovError("Lyapunov matrix is not positive definite") from exc


def vertex_rate(k, a, lyap):
    """Largest rate r with lyap*Acl + Acl'*lyap <= -2 r lyap at gain ``a``."""
    chol = _cholesky(lyap)
    acl = closed_loop_matrix(k, a)
    res = lyap @ acl + acl.T @ lyap
    linv = invert(chol)
    sym = linv @ res @ linv.T
    return -float(np.linalg.eigvalsh(0.5 * (sym + sym.T)).max()) / 2.0


def verify_gain(n, k, alpha, beta, lyap, mu):
    n = check_dimension(n, lo=1)
    k = tuple(float(v) for v in k)
    if len(k) != n:
        raise DomainError(f"gain vector has length {len(k)}, expected {n}")
    if not 0.0 < alpha <= beta:
        raise DomainError(f"sector bounds must satisfy 0 < alpha <= beta, got {alpha}, {beta}")
    if mu <= 0.0:
        raise DomainError("decay rate mu must be positive")
    lyap = np.array(lyap, dtype=float)
    if lyap.shape != (n, n):
        raise InvalidLyapunovError(f"Lyapunov matrix has shape {lyap.shape}")
    if np.abs(lyap - lyap.T).max() > 1e-12 * max(1.0, np.abs(lyap).max()):
        raise InvalidLyapunovError("Lyapunov matrix is not symmetric")
    _cholesky(lyap)

    scale = max(1.0, induced_norm2(lyap))
    rates = []
    for a in (alpha, beta):
        acl = closed_loop_matrix(k, a)
        res = lyap @ acl + acl.T @ lyap + 2.0 * mu * lyap
        worst = float(np.linalg.eigvalsh(0.5 * (res + res.T)).max())
        if worst > VERTEX_TOL * scale:
            raise NotStabilizingError(
                f"vertex a={a}: Lyapunov residual has eigenvalue {worst:.3g} > 0", vertex=a
            )
        rates.append(vertex_rate(k, a, lyap))
    rate = max(min(rates), mu)

    eig = np.linalg.eigvalsh(lyap)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    M0 = math.sqrt(lam_max / lam_min)
    gap = rate - mu
    if gap <= 0.0:
        M = tuple(math.inf for _ in range(n))
    else:
        M = tuple(math.sqrt(lyap[i, i] / lam_min) / gap for i in range(n))
    lyap.setflags(write=False)
    return GainCertificate(n, k, float(alpha), float(beta), float(mu), M0, M, lyap, rate)


def default_gain(n, alpha=1.0, beta=1.0):
    """Gain placing every nominal (a = 1) closed-loop pole at -1."""
    n = check_dimension(n, lo=1)
    return tuple(-float(math.comb(n, i)) for i in range(n))


def design_lyapunov(k, alpha, beta):
    """Solve the Lyapunov equation at the sector midpoint; return (lyap, rate).

    ``rate`` is the decay rate certified at both vertices; a caller picks
    ``mu`` strictly below it.
    """
    k = np.asarray(k, dtype=float)
    n = k.size
    acl = closed_loop_matrix(k, 0.5 * (alpha + beta))
    eye = np.eye(n)
    lhs = np.kron(eye, acl.T) + np.kron(acl.T, eye)
    try:
        vec = np.linalg.solve(lhs, -eye.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise NotStabilizingError("closed loop is not Hurwitz at the sector midpoint") from exc
    lyap = vec.reshape(n, n)
    lyap = 0.5 * (lyap + lyap.T)
    rate = min(vertex_rate(k, a, lyap) for a in (alpha, beta))
    if rate <= 0.0:
        raise NotStabilizingError("no common quadratic Lyapunov decay at both vertices")
    return lyap, rate


def auto_gain_certificate(n, k=None, alpha=1.0, beta=1.0):
    """Certificate for ``k`` (default: poles at -1) with mu at half the certified rate."""
    k = default_gain(n) if k is None else tuple(k)
    lyap, rate = design_lyapunov(k, alpha, beta)
    return verify_gain(n, k, alpha, beta, lyap, 0.5 * rate)


# Three-integrator example: k = (-3, -5, -3), V(x) = x' T'T x / 2.
EXAMPLE31_K = (-3.0, -5.0, -3.0)
EXAMPLE31_MU = 0.25
EXAMPLE31_M0 = math.sqrt(190.0)
EXAMPLE31_M3 = 2.0 * math.sqrt(5.0)


def example31_lyapunov():
    t = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
    return t.T @ t


def example31_certificate(presets=True):
    """Certificate for the three-integrator example.

    With ``presets`` the computed M0 and M3 are replaced by the published
    upper bounds sqrt(190) and 2*sqrt(5); M1 and M2 stay as computed.
    """
    gc = verify_gain(3, EXAMPLE31_K, 1.0, 1.0, example31_lyapunov(), EXAMPLE31_MU)
    if not presets:
        return gc
    return GainCertificate(
        3, gc.k, gc.alpha, gc.beta, gc.mu, EXAMPLE31_M0,
        (gc.M[0], gc.M[1], EXAMPLE31_M3), gc.lyap, gc.lyap_rate,
    )


@dataclass(frozen=True)
class StepCertificate:
    h: float
    cond1: float
    cond2: float
    valid: bool
    c: Optional[float] = None
    Lrem: Optional[float] = None
    log_Lrem: Optional[float] = None
    Q0: Optional[float] = None
    Q: Optional[tuple] = None
    Qe: Optional[float] = None


def step_conditions(gc, ec, h):
    """Left-hand sides of the two step-size inequalities."""
    n, beta, kn = gc.n, gc.beta, gc.knorm
    E = _exp(gc.mu * (n - 1) * h)
    cond1 = beta * h * ec.Kn * kn * E
    if cond1 == 1.0:
        return cond1, math.inf
    cond2 = h * ec.Kn * gc.Mn * beta**2 * kn**2 * E / (1.0 - cond1) ** 2
    return cond1, cond2


def step_certificate(gc, ec: EstimatorConstants, h):
    if gc.n != ec.n:
        raise DomainError(f"gain certificate has n={gc.n}, estimator constants n={ec.n}")
    h = float(h)
    if not 0.0 < h <= 1.0:
        raise DomainError(f"step h={h} outside (0, 1]")
    cond1, cond2 = step_conditions(gc, ec, h)
    if not (cond1 < 1.0 and cond2 < 1.0):
        return StepCertificate(h, cond1, cond2, False)

    n, beta, kn, mu = gc.n, gc.beta, gc.knorm, gc.mu
    K0, K, Kn = ec.K0, ec.K, ec.Kn
    M0, M, Mn = gc.M0, gc.M, gc.Mn
    E = _exp(mu * (n - 1) * h)
    bk = beta * kn
    c = h * Kn * E / (1.0 - h * Kn * bk * E) ** 2
    hpow = h ** (1 - n)
    log_L = math.log1p(K0 * hpow) + 2.0 * (n + bk * hpow * K0 + mu) * (n - 1) * h
    L = _exp(log_L)
    denom = 1.0 - c * Mn * bk**2
    Q0 = M0 + Mn * bk * (c * M0 * bk + n * L) / denom
    Q = tuple(
        M[i] + Mn * bk * (c * (K[i] * h ** (i + 1 - n) + Kn * bk * M[i]) + L * Kn) / (denom * Kn)
        for i in range(n)
    )
    Qe = Mn * hpow * K0 * bk * (E + bk * (c * (Mn * bk * E + 1.0) + L * E) / denom)
    return StepCertificate(h, cond1, cond2, True, c, L, log_L, Q0, Q, Qe)


def _assert_monotone(gc, ec, points=1000):
    hs = np.logspace(math.log10(H_FLOOR), 0.0, points)
    vals = np.array([step_conditions(gc, ec, h) for h in hs])
    inside = vals[:, 0] < 1.0
    for col in range(2):
        v = vals[inside, col]
        if np.any(np.diff(v) <= 0.0):
            raise NumericalFailureError("step conditions are not increasing on the sampling grid")


def max_certified_step(gc, ec):
    """Largest h in (0, 1] such that every step up to h is certified.

    Bisection in log(h) to relative tolerance 1e-6; the returned value is
    itself certified.
    """
    _assert_monotone(gc, ec)
    if step_certificate(gc, ec, 1.0).valid:
        return 1.0
    lo, hi = H_FLOOR, 1.0
    if not step_certificate(gc, ec, lo).valid:
        raise InfeasibleError(f"no certified step h >= {H_FLOOR}")
    while hi / lo - 1.0 > BISECTION_RTOL:
        mid = math.sqrt(lo * hi)
        if step_certificate(gc, ec, mid).valid:
            lo = mid
        else:
            hi = mid
    return lo


def feedback_coefficients(k, b, r=1.0):
    """Per-sample weights r^n k' diag(1, 1!/(-b), ...) P^-1 of the delayed feedback."""
    k = np.asarray(k, dtype=float)
    n = k.size
    return float(r) ** n * (k * scaling_diagonal(n, b)) @ invert(vandermonde(n))


@dataclass(frozen=True)
class ScaledDesign:
    """Delayed output feedback, optionally certified for the cascade.

    ``h`` is the sampling step actually used, ``b`` the base step at which
    the gains were certified and ``r`` the high-gain scaling (h = b / r).
    Uncertified designs (``certified=False``) leave the envelope fields None.
    """

    n: int
    k: tuple
    b: float
    r: float
    h: float
    feedback_coeffs: np.ndarray = field(repr=False)
    certified: bool = False
    Rb: Optional[float] = None
    Lhyp: Optional[float] = None
    gamma: Optional[float] = None
    cz: Optional[float] = None
    mu: Optional[float] = None
    mu_tilde: Optional[float] = None
    p_r: Optional[float] = None
    env_Q: Optional[float] = None
    env_K: Optional[float] = None
    env_M: Optional[float] = None
    certificate: Optional[StepCertificate] = None


def unscaled_design(k, h, r=1.0):
    """Feedback at step h with no certification attached (r = 1 gives the plain law)."""
    k = tuple(float(v) for v in k)
    b = float(h) * r
    coeffs = feedback_coefficients(k, b, r)
    coeffs.setflags(write=False)
    return ScaledDesign(len(k), k, b, float(r), float(h), coeffs)


def scaled_design(gc, ec, b, gamma, Lhyp, cz, r):
    cert = step_certificate(gc, ec, b)
    if not cert.valid:
        raise InvalidBaseStepError(
            f"base step b={b} not certified (cond1={cert.cond1:.4g}, cond2={cert.cond2:.4g})"
        )
    sumQ = sum(cert.Q)
    Rb = 1.0 + Lhyp * (cert.Q[-1] * gamma + sumQ)
    if not r > Rb:
        raise ScalingTooSmallError(f"scaling r={r} must exceed R(b)={Rb:.6g}", Rb)
    n = gc.n
    coeffs = feedback_coefficients(gc.k, b, r)
    coeffs.setflags(write=False)
    return ScaledDesign(
        n, gc.k, float(b), float(r), b / r, coeffs,
        certified=True,
        Rb=Rb,
        Lhyp=float(Lhyp),
        gamma=float(gamma),
        cz=float(cz),
        mu=gc.mu,
        mu_tilde=min(cz / r, gc.mu),
        p_r=r**n / (r + 1.0 - Rb),
        env_Q=(1.0 + gamma) * cert.Q0 + 1.0 + (1.0 + gamma) * Lhyp * cert.Q[-1],
        env_K=(1.0 + gamma) * sumQ,
        env_M=cert.Qe * (1.0 + gamma),
        certificate=cert,
    )


def check_a1_via_w(c, p, K):
    """Constants of the z-subsystem estimate from a dissipation inequality on W.

    With grad W . f <= -2 c p W + K |x|^p, the function V = W^(1/p) satisfies
    the fading-memory estimate with gain (K / (c p))^(1/p) and rate c.
    """
    if min(c, p, K) <= 0.0:
        raise DomainError("c, p and K must all be positive")
    return (K / (c * p)) ** (1.0 / p), float(c)


# Cascade example: W(z) = z^4/4 gives V(z) = z^2/2 with rate c = 1/2 and
# K = 1/4, hence gamma = 1/2; the x-coupling constant is L = 2.
EXAMPLE32_CZ = 0.5
EXAMPLE32_GAMMA = 0.5
EXAMPLE32_LHYP = 2.0
