"""Empirical checks of the trajectory estimates and the stability boundary."""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .delayop import build_delay_operator, estimator_constants, example31_constants
from .errors import BadBracketError, ConfigurationError
from .gains import step_certificate
from .simcore import (
    History,
    Signal,
    chain_plant,
    open_loop_chain,
    simulate_chain,
    _signals,
)

REL_TOL = 1e-9


def weighted_sup(values, dt, mu, seed=0.0):
    """Running sup_{tau <= t} exp(-mu (t - tau)) |v(tau)| on a uniform grid.

    ``seed`` is the value of the same supremum at the first grid time taken
    over any samples before it (e.g. an initial-history window).
    """
    values = np.abs(np.asarray(values, dtype=float))
    out = np.empty_like(values)
    decay = math.exp(-mu * dt)
    s = seed
    for i, val in enumerate(values):
        s = max(s * decay if i else s, val)
        out[i] = s
    return out


def _term(coeff, sup):
    """coeff * sup with 0 * inf taken as 0."""
    return np.where(sup == 0.0, 0.0, coeff * np.where(sup == 0.0, 1.0, sup))


def _ratios(lhs, rhs):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > 0.0, lhs / np.where(rhs > 0.0, rhs, 1.0), np.where(lhs > 0.0, np.inf, 0.0))
    return r


@dataclass
class Report:
    """Outcome of an inequality check over a trajectory grid.

    ``vacuous`` flags a right-hand side containing an infinite constant
    multiplying a nonzero input, in which case passing carries no information.
    """

    name: str
    passed: bool
    max_ratio: float
    worst_time: Optional[float] = None
    vacuous: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _signal_samples(sig, times):
    return np.array([sig(t) for t in times])


def check_fading_memory(traj, cert, gc, v=None, e=None, tol=REL_TOL):
    """Compare |x(t)| with the fading-memory bound built from ``cert``."""
    if not cert.valid:
        raise ConfigurationError("step certificate is not valid")
    if traj.h is None or abs(traj.h - cert.h) > 1e-12 * cert.h:
        raise ConfigurationError(f"trajectory step h={traj.h} does not match certificate h={cert.h}")
    n, mu, dt = gc.n, gc.mu, traj.dt
    v = _signals(v, n, "v")
    e = Signal.zero() if e is None else e
    t = traj.times

    rhs = _term(cert.Q0, np.full(t.size, traj.history_norm())) * np.exp(-mu * t)
    vacuous = False
    for Qi, sig in zip(cert.Q, v):
        if sig.is_zero:
            continue
        sup = weighted_sup(_signal_samples(sig, t), dt, mu)
        rhs = rhs + _term(Qi, sup)
        vacuous |= math.isinf(Qi) and bool(np.any(sup > 0))
    if not e.is_zero:
        # The noise supremum starts at the beginning of the history window.
        seed = max((abs(e(tau)) * math.exp(mu * tau) for tau in traj.hist_times[:-1]), default=0.0)
        sup = weighted_sup(_signal_samples(e, t), dt, mu, seed=seed)
        rhs = rhs + _term(cert.Qe, sup)
        vacuous |= math.isinf(cert.Qe) and bool(np.any(sup > 0))
    vacuous |= math.isinf(cert.Q0) and traj.history_norm() > 0

    lhs = traj.state_norm()
    ratios = _ratios(lhs, rhs)
    i = int(np.argmax(ratios))
    max_ratio = float(ratios[i])
    return Report(
        "fading-memory",
        max_ratio <= 1.0 + tol,
        max_ratio,
        float(t[i]),
        vacuous,
        {"h": cert.h, "Q0": cert.Q0, "Qe": cert.Qe, "log_Lrem": cert.log_Lrem},
    )


def check_iss_estimate(traj, gc, v=None, tol=REL_TOL):
    """State-feedback estimate |x(t)| <= M0 e^{-mu t}|x0| + sum M_i sup e^{-mu(t-s)}|v_i(s)|."""
    n, mu, t = gc.n, gc.mu, traj.times
    v = _signals(v, n, "v")
    rhs = gc.M0 * np.linalg.norm(traj.x[0]) * np.exp(-mu * t)
    for Mi, sig in zip(gc.M, v):
        if not sig.is_zero:
            rhs = rhs + _term(Mi, weighted_sup(_signal_samples(sig, t), traj.dt, mu))
    ratios = _ratios(traj.state_norm(), rhs)
    i = int(np.argmax(ratios))
    return Report("state-feedback-iss", float(ratios[i]) <= 1.0 + tol, float(ratios[i]), float(t[i]))


def check_cascade_envelope(traj, design, V, a_func, v=None, e=None, tol=REL_TOL):
    """Compare |x(t)| + V(z(t)) with the scaled-design envelope.

    ``V`` maps a z-vector to the storage value and ``a_func`` bounds V of the
    initial z in terms of |z0|.
    """
    if not design.certified:
        raise ConfigurationError("cascade envelope needs a certified scaled design")
    if traj.z is None:
        raise ConfigurationError("trajectory has no z component")
    if abs(traj.h - design.h) > 1e-12 * design.h:
        raise ConfigurationError(f"trajectory step h={traj.h} does not match design h={design.h}")
    n, r, p = design.n, design.r, design.p_r
    rate = design.mu_tilde * r
    t = traj.times
    v = _signals(v, n, "v")
    e = Signal.zero() if e is None else e

    z0 = float(np.linalg.norm(traj.z[0]))
    init = p * traj.history_norm() + a_func(z0)
    rhs = _term(design.env_Q, np.full(t.size, init)) * np.exp(-rate * t)
    vacuous = math.isinf(design.env_Q) and init > 0
    active = [sig for sig in v if not sig.is_zero]
    if active:
        vnorm = np.sqrt(sum(_signal_samples(sig, t) ** 2 for sig in active))
        rhs = rhs + _term(p * design.env_K / r, weighted_sup(vnorm, traj.dt, rate))
    if not e.is_zero:
        seed = max((abs(e(tau)) * math.exp(rate * tau) for tau in traj.hist_times[:-1]), default=0.0)
        rhs = rhs + _term(p * design.env_M, weighted_sup(_signal_samples(e, t), traj.dt, rate, seed))
        vacuous |= math.isinf(design.env_M)

    lhs = traj.state_norm() + np.array([V(z) for z in traj.z])
    ratios = _ratios(lhs, rhs)
    i = int(np.argmax(ratios))
    max_ratio = float(ratios[i])
    return Report(
        "cascade-envelope",
        max_ratio <= 1.0 + tol,
        max_ratio,
        float(t[i]),
        vacuous,
        {"r": r, "Rb": design.Rb, "mu_tilde": design.mu_tilde, "p_r": p},
    )


def _random_piecewise_constant(rng, T_end, dt, bound, mean_hold):
    """Piecewise-constant signal with breakpoints on grid nodes and |value| <= bound."""
    times, node = [0.0], 0
    while True:
        node += max(1, int(rng.exponential(mean_hold / dt)))
        if node * dt >= T_end:
            break
        times.append(node * dt)
    values = rng.uniform(-bound, bound, size=len(times))
    return Signal.piecewise_constant(times, values)


def check_estimator_bound(n, h, runs, constants=None, seed=0, input_bound=1.0, dt_div=8, horizon=20,
                          channels=None):
    """Monte-Carlo check of the estimator error bound on the open-loop chain.

    Each run draws a random initial state and random piecewise-constant
    inputs |u_j| <= ``input_bound``, integrates the chain over ``horizon``
    sampling steps past the first full window, and compares the estimation
    error with sum_j K_j h^(j+1-n) sup|u_j| at every grid time t >= (n-1)h.
    ``channels`` restricts the random inputs to the given 1-based indices.
    """
    if constants is None:
        constants = example31_constants() if n == 3 else estimator_constants(n)
    op = build_delay_operator(n, h)
    m = dt_div
    dt = h / m
    T_end = (n - 1 + horizon) * h
    rng = np.random.default_rng(seed)
    K = np.asarray(constants.K)
    hpow = h ** (np.arange(1, n + 1) + 1.0 - n)
    lags = np.arange(n) * m
    window = (n - 1) * m

    violations, worst_ratio, worst_margin, checked = 0, 0.0, math.inf, 0
    for _ in range(runs):
        x0 = rng.uniform(-1.0, 1.0, size=n)
        if input_bound > 0:
            u = tuple(
                _random_piecewise_constant(rng, T_end, dt, input_bound, h)
                if channels is None or j + 1 in channels else Signal.zero()
                for j in range(n)
            )
        else:
            u = None
        traj = open_loop_chain(n, u, x0, T_end, dt)
        usamp = (
            np.array([[sig(t) for sig in u] for t in traj.times]) if u is not None
            else np.zeros((traj.times.size, n))
        )
        x1 = traj.x[:, 0]
        for i in range(window, traj.times.size):
            est = op.coeff @ x1[i - lags]
            err = float(np.linalg.norm(traj.x[i] - est))
            # Breakpoints sit on nodes, so the essential sup over the window
            # is attained on the nodes [i - window, i - 1].
            sup = np.abs(usamp[i - window: i]).max(axis=0)
            bound = float(np.sum(K * hpow * sup))
            slack = bound * REL_TOL + 1e-10 * max(1.0, float(np.linalg.norm(traj.x[i])))
            checked += 1
            if err > bound + slack:
                violations += 1
            if bound > 0:
                worst_ratio = max(worst_ratio, err / bound)
            worst_margin = min(worst_margin, bound - err)
    return Report(
        "estimator-bound",
        violations == 0,
        worst_ratio,
        details={
            "n": n, "h": h, "runs": runs, "checked": checked, "violations": violations,
            "worst_margin": worst_margin, "K": list(constants.K),
        },
    )


@dataclass(frozen=True)
class ChainSetup:
    """Everything except h needed to classify a closed-loop chain run."""

    plant: object
    k: tuple
    history: History
    v: Optional[tuple] = None
    e: Optional[Signal] = None
    d: Optional[tuple] = None
    T_end: float = 200.0
    dt_div: int = 32
    sampling: str = "hold"
    decay: float = 1e-2
    blowup: float = 1e6


def example31_setup(**kw):
    from .gains import EXAMPLE31_K
    from .simcore import example31_plant

    return ChainSetup(example31_plant(), EXAMPLE31_K, History.example31(), **kw)


def classify_step(setup, h):
    """'stable', 'unstable' or 'marginal' for one run at step h."""
    traj = simulate_chain(
        setup.plant, setup.k, h, setup.history, setup.v, setup.e, setup.d,
        T_end=setup.T_end, dt=h / setup.dt_div, abort_norm=setup.blowup, sampling=setup.sampling,
    )
    if traj.diverged:
        return "unstable"
    if np.linalg.norm(traj.x[-1]) < traj.history_norm() * setup.decay:
        return "stable"
    return "marginal"


def empirical_max_step(setup, h_lo, h_hi, tol=5e-3):
    """Bisect the run classifier for the largest stable step.

    Marginal runs count as not stable.  Returns the midpoint of the final
    bracket, whose width is at most ``tol``.
    """
    if classify_step(setup, h_lo) != "stable":
        raise BadBracketError(f"lower end h={h_lo} is not stable")
    if classify_step(setup, h_hi) == "stable":
        raise BadBracketError(f"upper end h={h_hi} is stable")
    lo, hi = h_lo, h_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if classify_step(setup, mid) == "stable":
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fading_memory_trials(gc, ec, h, runs, seed=0, T_end=5.0, dt_div=4, input_bound=1.0,
                         noise_bound=1e-3, sampling="continuous", plant=None):
    """Random bounded-input closed-loop runs checked against the certificate at h."""
    cert = step_certificate(gc, ec, h)
    if not cert.valid:
        raise ConfigurationError(f"h={h} is not certified")
    n = gc.n
    plant = plant or chain_plant(n)
    rng = np.random.default_rng(seed)
    dt = h / dt_div
    reports = []
    for _ in range(runs):
        x0 = History.constant(rng.uniform(-1.0, 1.0, size=n))
        v = tuple(_random_piecewise_constant(rng, T_end, dt, input_bound, 0.5) for _ in range(n))
        e = _random_piecewise_constant(rng, T_end, dt, noise_bound, 0.5)
        traj = simulate_chain(plant, gc.k, h, x0, v, e, None, T_end=T_end, dt=dt, sampling=sampling)
        reports.append(check_fading_memory(traj, cert, gc, v, e))
    return reports
