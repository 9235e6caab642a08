"""Fixed-step simulation of the delayed output-feedback closed loops.

The integrator is classical RK4 on a uniform grid whose step ``dt`` divides
the sampling step ``h``, so every delayed sample t - j*h at a step endpoint
is a stored grid node.  The half-step RK4 stages need the delayed output
between two nodes; it is taken from the cubic Hermite interpolant of the
stored x1 values and slopes (inside the initial-history window the history
function is evaluated directly).  This keeps the scheme fourth order.
"""

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation, DimensionError, GridMismatchError
from .gains import feedback_coefficients

SECTOR_TOL = 1e-12
SAMPLING_MODES = ("hold", "hybrid", "continuous")


# --------------------------------------------------------------------------
# Signals


@dataclass(frozen=True)
class Signal:
    """A scalar input signal of time (and, for ``state-sign``, of the state).

    ``params`` layout per kind:

    * ``zero``: ()
    * ``constant``: (value,)
    * ``sinusoid``: (amplitude, omega, phase) -> amplitude*sin(omega*t + phase)
    * ``piecewise-linear`` / ``table``: (times, values), linear interpolation,
      held constant outside the breakpoints
    * ``piecewise-constant``: (times, values), value of the last breakpoint <= t
    * ``state-sign``: (index,) with a 1-based state index; sgn(0) = 0
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown signal kind {self.kind!r}")
        if self.kind in ("piecewise-linear", "table", "piecewise-constant"):
            times, values = self.params
            if len(times) != len(values) or not times:
                raise ConfigurationError(f"{self.kind}: times and values must be non-empty and match")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError(f"{self.kind}: times must be strictly increasing")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", (float(value),))

    @classmethod
    def sinusoid(cls, amplitude, omega, phase=0.0):
        return cls("sinusoid", (float(amplitude), float(omega), float(phase)))

    @classmethod
    def cosine(cls, amplitude, omega):
        return cls.sinusoid(amplitude, omega, math.pi / 2)

    @classmethod
    def piecewise_linear(cls, times, values):
        return cls("piecewise-linear", (tuple(map(float, times)), tuple(map(float, values))))

    @classmethod
    def table(cls, times, values):
        return cls("table", (tuple(map(float, times)), tuple(map(float, values))))

    @classmethod
    def piecewise_constant(cls, times, values):
        return cls("piecewise-constant", (tuple(map(float, times)), tuple(map(float, values))))

    @classmethod
    def state_sign(cls, index):
        return cls("state-sign", (int(index),))

    @property
    def is_zero(self):
        return self.kind == "zero" or (self.kind == "constant" and self.params[0] == 0.0)

    def __call__(self, t, x=None, left=False):
        """Value at time t; ``left`` gives the left limit at a jump."""
        kind, p = self.kind, self.params
        if kind == "zero":
            return 0.0
        if kind == "constant":
            return p[0]
        if kind == "sinusoid":
            return p[0] * math.sin(p[1] * t + p[2])
        if kind in ("piecewise-linear", "table"):
            return float(np.interp(t, p[0], p[1]))
        if kind == "piecewise-constant":
            i = (bisect.bisect_left if left else bisect.bisect_right)(p[0], t) - 1
            return p[1][max(i, 0)]
        if x is None:
            raise ConfigurationError("state-sign signal evaluated without a state")
        xi = x[p[0] - 1]
        return 1.0 if xi > 0.0 else (-1.0 if xi < 0.0 else 0.0)

    def sup_abs(self, t0, t1):
        """Upper bound on |signal| over [t0, t1]; exact except for sinusoids."""
        kind, p = self.kind, self.params
        if kind == "zero":
            return 0.0
        if kind == "constant":
            return abs(p[0])
        if kind == "sinusoid":
            return abs(p[0])
        if kind == "state-sign":
            return 1.0
        times, values = p
        pts = [t0, t1] + [t for t in times if t0 <= t <= t1]
        return max(abs(self(t)) for t in pts)


_KINDS = ("zero", "constant", "sinusoid", "piecewise-linear", "table", "piecewise-constant", "state-sign")


def _signals(sigs, count, what):
    if sigs is None:
        return (Signal.zero(),) * count
    if isinstance(sigs, Signal):
        sigs = (sigs,)
    sigs = tuple(sigs)
    if len(sigs) != count:
        raise DimensionError(f"{what}: expected {count} signals, got {len(sigs)}")
    return sigs


# --------------------------------------------------------------------------
# Plants and initial data


@dataclass(frozen=True)
class Plant:
    """Integrator chain (``variant='chain'``) or minimum-phase cascade.

    ``gain(d, z, x)`` is the uncertain input gain (None means identically 1);
    ``f(d, z, x)`` the z-dynamics and ``g(d, z, x)`` the n-vector of
    perturbation terms, both only for the cascade.  ``nd`` is the number of
    disturbance components d.
    """

    variant: str
    n: int
    alpha: float = 1.0
    beta: float = 1.0
    gain: Optional[Callable] = None
    kz: int = 0
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    nd: int = 0
    name: str = ""

    def __post_init__(self):
        if self.variant not in ("chain", "cascade"):
            raise ConfigurationError(f"unknown plant variant {self.variant!r}")
        if self.variant == "cascade" and (self.f is None or self.kz < 1):
            raise ConfigurationError("cascade plant needs f and kz >= 1")


def chain_plant(n, alpha=1.0, beta=1.0, gain=None, nd=0, name=None):
    return Plant("chain", int(n), float(alpha), float(beta), gain, nd=nd, name=name or f"chain({n})")


def example31_plant():
    return chain_plant(3, name="example31")


def _ex32_f(d, z, x):
    return np.array([-z[0] - z[0] ** 3 + d[0] * x[1]])


def _ex32_g(d, z, x):
    return np.array([0.0, 0.0, d[1] * z[0] ** 2])


def example32_plant():
    """z' = -z - z^3 + d1 x2, x3' = d2 z^2 + u, with d in [-1, 1]^2."""
    return Plant("cascade", 3, 1.0, 1.0, None, 1, _ex32_f, _ex32_g, 2, "example32")


@dataclass(frozen=True)
class History:
    """Initial state function on [-(n-1)h, 0], one signal per component."""

    components: tuple

    @property
    def n(self):
        return len(self.components)

    def __call__(self, theta):
        return np.array([c(theta) for c in self.components])

    def x1(self, theta):
        return self.components[0](theta)

    @classmethod
    def constant(cls, x0):
        return cls(tuple(Signal.constant(v) for v in x0))

    @classmethod
    def example31(cls):
        """x2 = x3 = 1; x1 = 0 up to theta = -0.1, then x1 = 10 theta + 1 on [-0.1, 0]."""
        return cls((
            Signal.piecewise_linear((-0.1, 0.0), (0.0, 1.0)),
            Signal.constant(1.0),
            Signal.constant(1.0),
        ))


# --------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    dt: float
    h: Optional[float]
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None
    hist_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    hist_x: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    hist_y: np.ndarray = field(default_factory=lambda: np.empty(0))
    diverged: bool = False
    diverged_time: Optional[float] = None

    @property
    def n(self):
        return self.x.shape[1]

    def state_norm(self):
        return np.linalg.norm(self.x, axis=1)

    def history_norm(self):
        """sup over the initial-history window of |x(theta)|."""
        if self.hist_x.size == 0:
            return float(np.linalg.norm(self.x[0]))
        return float(max(np.linalg.norm(self.hist_x, axis=1).max(), np.linalg.norm(self.x[0])))

    def at(self, t):
        """State at the grid node nearest to t."""
        i = int(round(t / self.dt))
        return self.x[i]


def grid_divisor(h, dt):
    """Return m = h/dt, requiring an integer m >= 4."""
    m = int(round(h / dt))
    if m < 4 or abs(m * dt - h) > 1e-9 * h:
        raise GridMismatchError(f"dt={dt} must equal h/m for an integer m >= 4 (h={h})")
    return m


def _rk4_loop(rhs, s0, dt, steps, abort_norm, xslice, on_node=None):
    """Generic RK4 driver; rhs(i, stage, s) with stage in {0, 1, 2} = node, half, next."""
    out = np.empty((steps + 1, s0.size))
    out[0] = s0
    s = s0
    half = 0.5 * dt
    last = steps
    for i in range(steps):
        k1 = rhs(i, 0, s)
        if on_node is not None:
            on_node(i, k1)
        k2 = rhs(i, 1, s + half * k1)
        k3 = rhs(i, 1, s + half * k2)
        k4 = rhs(i, 2, s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = s
        if not np.all(np.isfinite(s)) or (
            abort_norm is not None and np.linalg.norm(s[xslice]) > abort_norm
        ):
            last = i + 1
            break
    return out[: last + 1], last < steps or not np.all(np.isfinite(out[last]))


def _steps(T_end, dt):
    return int(math.ceil(T_end / dt - 1e-9))


def _simulate_delayed(plant, coeffs, h, x0, z0, v, e, d, T_end, dt, abort_norm, sampling):
    n, kz = plant.n, plant.kz
    if x0.n != n:
        raise DimensionError(f"history has {x0.n} components, plant has n={n}")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (n,):
        raise DimensionError(f"feedback needs {n} coefficients")
    if sampling not in SAMPLING_MODES:
        raise ConfigurationError(f"unknown sampling mode {sampling!r}")
    dt = h / 32.0 if dt is None else float(dt)
    m = grid_divisor(h, dt)
    dt = h / m
    v = _signals(v, n, "v")
    d = _signals(d, plant.nd, "d")
    if not isinstance(e, Signal):
        e = Signal.zero() if e is None else e
    steps = _steps(T_end, dt)
    off = (n - 1) * m

    # Node arrays cover the history window and the simulation horizon.
    node_t = (np.arange(off + steps + 1) - off) * dt
    X1 = np.full(off + steps + 1, np.nan)
    X1dot = np.full(off + steps + 1, np.nan)
    E = np.array([e(t) for t in node_t])
    hist_x = np.array([x0(t) for t in node_t[: off + 1]])
    X1[: off + 1] = hist_x[:, 0]

    v_active = [(i, sig) for i, sig in enumerate(v) if not sig.is_zero]
    gain, f, g = plant.gain, plant.f, plant.g
    alpha, beta = plant.alpha, plant.beta
    c0, cdel = coeffs[0], coeffs[1:]
    lags = np.arange(1, n) * m
    xs = slice(kz, kz + n)
    zero_z = np.empty(0)
    u_nodes = np.zeros(steps + 1)

    def delayed_outputs(i, stage):
        t = (i + 0.5 * stage) * dt
        out = np.empty(n - 1)
        for j, lag in enumerate(lags):
            p = i - lag + off  # node index of the left endpoint
            if stage == 0:
                out[j] = X1[p] + E[p]
            elif stage == 2:
                out[j] = X1[p + 1] + E[p + 1]
            else:
                tau = t - (j + 1) * h
                if p < off:
                    x1 = x0.x1(tau)
                else:
                    x1 = 0.5 * (X1[p] + X1[p + 1]) + dt * (X1dot[p] - X1dot[p + 1]) / 8.0
                out[j] = x1 + e(tau)
        return out

    def buffered_outputs(i):
        # Samples y(t_k - j h) for the latest sampling instant t_k <= t_i.
        p = (i // m) * m + off
        return np.array([X1[p - lag] + E[p - lag] for lag in lags])

    def rhs(i, stage, s):
        t = (i + 0.5 * stage) * dt
        z = s[:kz] if kz else zero_z
        x = s[kz:]
        # the last RK stage sits at the right end of the step: use left limits there
        left = stage == 2
        dv = np.array([sig(t, x, left) for sig in d]) if d else zero_z
        if sampling == "hold":
            p = (i // m) * m + off
            u = c0 * (X1[p] + E[p]) + cdel @ buffered_outputs(i)
        else:
            y0 = x[0] + (E[i + off] if stage == 0 else e(t, None, left))
            if sampling == "hybrid":
                u = c0 * y0 + cdel @ buffered_outputs(i)
            else:
                u = c0 * y0 + cdel @ delayed_outputs(i, stage)
        a = 1.0 if gain is None else gain(dv, z, x)
        if not alpha - SECTOR_TOL <= a <= beta + SECTOR_TOL:
            raise ContractViolation(f"input gain a={a} outside [{alpha}, {beta}] at t={t}")
        xdot = np.empty(n)
        xdot[:-1] = x[1:]
        xdot[-1] = a * u
        for idx, sig in v_active:
            xdot[idx] += sig(t, None, left)
        if g is not None:
            xdot += g(dv, z, x)
        if stage == 0:
            u_nodes[i] = u
        if kz:
            return np.concatenate([f(dv, z, x), xdot])
        return xdot

    def on_node(i, k1):
        X1dot[i + off] = k1[kz]

    # x1 at the newest node must be known before the next step samples it.
    def rhs_tracking(i, stage, s):
        if stage == 0:
            X1[i + off] = s[kz]
        return rhs(i, stage, s)

    s0 = np.concatenate([np.asarray(z0, dtype=float).reshape(kz), hist_x[-1]]) if kz else hist_x[-1].copy()
    states, diverged = _rk4_loop(rhs_tracking, s0, dt, steps, abort_norm, xs, on_node)
    last = states.shape[0] - 1
    if last == steps and np.all(np.isfinite(states[-1])):
        # Control at the final node, for a complete u column.
        rhs_tracking(steps, 0, states[-1])
    times = np.arange(last + 1) * dt
    x = states[:, kz:]
    y = x[:, 0] + E[off: off + last + 1]
    return Trajectory(
        dt=dt,
        h=h,
        times=times,
        x=x,
        u=u_nodes[: last + 1],
        y=y,
        z=states[:, :kz] if kz else None,
        hist_times=node_t[: off + 1],
        hist_x=hist_x,
        hist_y=X1[: off + 1] + E[: off + 1],
        diverged=diverged,
        diverged_time=float(times[-1]) if diverged else None,
    )


def simulate_chain(plant, k, h, x0, v=None, e=None, d=None, T_end=10.0, dt=None,
                   abort_norm=None, sampling="hold"):
    """Integrator chain under u(t) = k' Delta_h (x1 + e).

    ``sampling`` selects how the delayed output samples enter the control:

    ``"hold"``
        sampled-data law: at each sampling instant t_k = k h the estimator is
        applied to y(t_k), ..., y(t_k - (n-1) h) and u is held until t_k + h.
    ``"hybrid"``
        newest sample is the live output y(t); older samples come from the
        buffer that refreshes at every t_k.
    ``"continuous"``
        the exact delay equation, u(t) built from y(t - j h) for every t.
    """
    if plant.variant != "chain":
        raise ConfigurationError("simulate_chain needs a chain plant")
    coeffs = feedback_coefficients(k, h)
    return _simulate_delayed(
        plant, coeffs, float(h), x0, None, v, e, d, T_end, dt, abort_norm, sampling
    )


def simulate_cascade(plant, design, z0, x0, v=None, e=None, d=None, T_end=10.0, dt=None,
                     abort_norm=None, sampling="hold"):
    """Cascade under the (possibly r-scaled) delayed feedback of ``design``."""
    if plant.variant != "cascade":
        raise ConfigurationError("simulate_cascade needs a cascade plant")
    return _simulate_delayed(
        plant, design.feedback_coeffs, design.h, x0, z0, v, e, d, T_end, dt, abort_norm, sampling
    )


def open_loop_chain(n, u, x0, T_end, dt):
    """Driven chain x_i' = x_{i+1} + u_i, x_n' = u_n with no feedback."""
    u = _signals(u, n, "u")
    steps = _steps(T_end, dt)
    active = [(i, sig) for i, sig in enumerate(u) if not sig.is_zero]

    def rhs(i, stage, s):
        t = (i + 0.5 * stage) * dt
        xdot = np.empty(n)
        xdot[:-1] = s[1:]
        xdot[-1] = 0.0
        for idx, sig in active:
            xdot[idx] += sig(t, None, stage == 2)
        return xdot

    states, diverged = _rk4_loop(rhs, np.array(x0, dtype=float), dt, steps, None, slice(0, n))
    times = np.arange(states.shape[0]) * dt
    un = np.array([u[-1](t) for t in times])
    return Trajectory(dt, None, times, states, un, states[:, 0].copy(), diverged=diverged,
                      diverged_time=float(times[-1]) if diverged else None)


def simulate_state_feedback(plant, k, x0, v=None, d=None, T_end=10.0, dt=1e-3):
    """Chain under the static state feedback u = k' x (no delays)."""
    if plant.variant != "chain":
        raise ConfigurationError("state feedback simulation needs a chain plant")
    n = plant.n
    k = np.asarray(k, dtype=float)
    v = _signals(v, n, "v")
    d = _signals(d, plant.nd, "d")
    steps = _steps(T_end, dt)
    u_nodes = np.zeros(steps + 1)
    active = [(i, sig) for i, sig in enumerate(v) if not sig.is_zero]
    gain, alpha, beta = plant.gain, plant.alpha, plant.beta
    zero_z = np.empty(0)

    def rhs(i, stage, x):
        t = (i + 0.5 * stage) * dt
        dv = np.array([sig(t, x, stage == 2) for sig in d]) if d else zero_z
        u = float(k @ x)
        a = 1.0 if gain is None else gain(dv, zero_z, x)
        if not alpha - SECTOR_TOL <= a <= beta + SECTOR_TOL:
            raise ContractViolation(f"input gain a={a} outside [{alpha}, {beta}] at t={t}")
        xdot = np.empty(n)
        xdot[:-1] = x[1:]
        xdot[-1] = a * u
        for idx, sig in active:
            xdot[idx] += sig(t, None, stage == 2)
        if stage == 0:
            u_nodes[i] = u
        return xdot

    states, diverged = _rk4_loop(rhs, np.array(x0, dtype=float), dt, steps, None, slice(0, n))
    last = states.shape[0] - 1
    u_nodes[last] = float(k @ states[-1])
    times = np.arange(last + 1) * dt
    return Trajectory(dt, None, times, states, u_nodes[: last + 1], states[:, 0].copy(),
                      diverged=diverged, diverged_time=float(times[-1]) if diverged else None)
