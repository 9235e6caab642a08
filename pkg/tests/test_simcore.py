import math

import numpy as np
import pytest

from delayfb.errors import ConfigurationError, ContractViolation, DimensionError, GridMismatchError
from delayfb.gains import EXAMPLE31_K, unscaled_design
from delayfb.simcore import (
    History,
    Plant,
    Signal,
    chain_plant,
    example31_plant,
    example32_plant,
    open_loop_chain,
    simulate_cascade,
    simulate_chain,
)

H = 0.1


def _ex31(h=H, **kw):
    return simulate_chain(example31_plant(), EXAMPLE31_K, h, History.example31(), **kw)


def _ex32(d2=Signal.constant(1.0), z0=(2.0,), hist=None, T_end=15.0):
    d = (Signal.state_sign(2), d2)
    return simulate_cascade(example32_plant(), unscaled_design(EXAMPLE31_K, H), z0,
                            hist or History.example31(), d=d, T_end=T_end)


# --------------------------------------------------------------------------
# signals


def test_signal_kinds():
    assert Signal.zero()(3.0) == 0.0
    assert Signal.constant(2.5)(-1.0) == 2.5
    assert Signal.sinusoid(2.0, 3.0, 0.5)(0.7) == pytest.approx(2.0 * math.sin(2.6))
    assert Signal.cosine(1.5, 1.0)(0.3) == pytest.approx(1.5 * math.cos(0.3))
    pwl = Signal.piecewise_linear((0.0, 1.0), (0.0, 2.0))
    assert pwl(0.25) == 0.5 and pwl(-1.0) == 0.0 and pwl(5.0) == 2.0
    pwc = Signal.piecewise_constant((0.0, 1.0), (3.0, -1.0))
    assert pwc(0.999) == 3.0 and pwc(1.0) == -1.0 and pwc(-2.0) == 3.0
    sgn = Signal.state_sign(2)
    assert sgn(0.0, np.array([5.0, -0.1])) == -1.0
    assert sgn(0.0, np.array([5.0, 0.0])) == 0.0
    with pytest.raises(ConfigurationError):
        sgn(0.0)


def test_signal_invariants():
    with pytest.raises(ConfigurationError):
        Signal.piecewise_linear((0.0, 0.0), (1.0, 2.0))
    with pytest.raises(ConfigurationError):
        Signal.table((1.0, 0.5), (1.0, 2.0))
    with pytest.raises(ConfigurationError):
        Signal("noise")
    assert Signal.constant(0.0).is_zero
    assert Signal.piecewise_linear((0.0, 1.0), (-3.0, 2.0)).sup_abs(0.5, 2.0) == 2.0


def test_example31_history():
    hist = History.example31()
    assert hist.x1(-0.2) == 0.0 and hist.x1(-0.1) == 0.0
    assert hist.x1(-0.05) == pytest.approx(0.5) and hist.x1(0.0) == 1.0
    assert np.array_equal(hist(0.0), [1.0, 1.0, 1.0])


# --------------------------------------------------------------------------
# chain closed loop


def test_example31_unforced_decay():
    traj = _ex31(T_end=10.0)
    assert np.linalg.norm(traj.x[-1]) < 1e-2
    assert traj.times[-1] == pytest.approx(10.0)
    assert np.all(np.isfinite(traj.u)) and not traj.diverged


def test_example31_forced_periodic():
    v = (Signal.zero(), Signal.cosine(1.0, 1.0), Signal.sinusoid(1.5, 1.0))
    traj = _ex31(v=v, T_end=20 + 4 * math.pi + 0.1)
    a, b, c = (traj.at(t) for t in (20.0, 20 + 2 * math.pi, 20 + 4 * math.pi))
    assert np.linalg.norm(a - b) < 1e-2 and np.linalg.norm(b - c) < 1e-2
    assert np.linalg.norm(b) > 0.1


def test_zero_history_gives_zero_trajectory():
    traj = simulate_chain(example31_plant(), EXAMPLE31_K, H, History.constant([0.0, 0.0, 0.0]), T_end=2.0)
    assert not np.any(traj.x) and not np.any(traj.u)


def test_hold_keeps_control_constant_between_samples():
    traj = _ex31(T_end=1.0)
    m = int(round(H / traj.dt))
    u = traj.u[:-1].reshape(-1, m)
    assert np.all(u == u[:, :1])


@pytest.mark.parametrize("sampling", ["hold", "hybrid", "continuous"])
def test_determinism(sampling):
    a = _ex31(T_end=3.0, sampling=sampling)
    b = _ex31(T_end=3.0, sampling=sampling)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)


def test_step_halving_continuous():
    tr = [_ex31(T_end=10.0, dt=H / m, sampling="continuous") for m in (4, 8, 16)]
    d1 = np.abs(tr[0].x - tr[1].x[::2]).max()
    d2 = np.abs(tr[1].x[::2] - tr[2].x[::4]).max()
    assert d1 / d2 >= 8.0


def test_step_halving_hold_is_exact():
    # piecewise-constant control makes each substep a polynomial ODE, which RK4 solves exactly
    tr = [_ex31(T_end=10.0, dt=H / m) for m in (4, 8)]
    assert np.abs(tr[0].x - tr[1].x[::2]).max() < 1e-12


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        _ex31(dt=0.03)
    with pytest.raises(GridMismatchError):
        _ex31(dt=H / 2)


def test_bad_inputs():
    with pytest.raises(DimensionError):
        simulate_chain(example31_plant(), EXAMPLE31_K, H, History.constant([1.0, 0.0]))
    with pytest.raises(DimensionError):
        simulate_chain(example31_plant(), (-1.0, -1.0), H, History.example31())
    with pytest.raises(ConfigurationError):
        _ex31(sampling="zoh")
    with pytest.raises(ConfigurationError):
        simulate_chain(example32_plant(), EXAMPLE31_K, H, History.example31())


def test_sector_assertion():
    plant = Plant("chain", 3, 0.5, 1.5, gain=lambda d, z, x: 2.0)
    with pytest.raises(ContractViolation):
        simulate_chain(plant, EXAMPLE31_K, H, History.example31(), T_end=1.0)
    ok = Plant("chain", 3, 0.5, 1.5, gain=lambda d, z, x: 1.0 + 0.5 * math.tanh(x[0]))
    traj = simulate_chain(ok, EXAMPLE31_K, H, History.example31(), T_end=1.0)
    assert not traj.diverged


def test_divergence_flag():
    traj = _ex31(h=0.4, T_end=200.0, abort_norm=1e6)
    assert traj.diverged
    assert traj.diverged_time == pytest.approx(traj.times[-1])
    assert np.linalg.norm(traj.x[-1]) > 1e6


# --------------------------------------------------------------------------
# cascade


def test_example32_decay():
    traj = _ex32()
    assert abs(traj.z[-1, 0]) < 1e-2 and np.linalg.norm(traj.x[-1]) < 1e-2
    assert traj.z.shape == (traj.times.size, 1)


def test_cascade_zero_equilibrium():
    traj = _ex32(z0=(0.0,), hist=History.constant([0.0, 0.0, 0.0]), T_end=2.0)
    assert not np.any(traj.x) and not np.any(traj.z)


def test_cascade_without_coupling_matches_chain():
    casc = _ex32(d2=Signal.zero(), T_end=10.0)
    chain = _ex31(T_end=10.0)
    assert np.abs(casc.x - chain.x).max() <= 1e-9


# --------------------------------------------------------------------------
# open loop


def test_open_loop_triple_integrator():
    traj = open_loop_chain(3, None, [0.0, 0.0, 1.0], 1.0, 1e-3)
    assert abs(traj.x[-1, 0] - 0.5) <= 1e-10
    step = open_loop_chain(3, (Signal.zero(), Signal.zero(), Signal.constant(1.0)), [0, 0, 0], 1.0, 1e-3)
    assert abs(step.x[-1, 0] - 1.0 / 6.0) <= 1e-10


def _exact_propagation(n, x0, times, values, t_end):
    """Piecewise-constant inputs propagated with exp(A s) and its integral."""
    def phi(s):
        return np.array([[s ** (j - i) / math.factorial(j - i) if j >= i else 0.0
                          for j in range(n)] for i in range(n)])

    def gamma(s):
        return np.array([[s ** (j - i + 1) / math.factorial(j - i + 1) if j >= i else 0.0
                          for j in range(n)] for i in range(n)])

    x = np.array(x0, dtype=float)
    edges = list(times[1:]) + [t_end]
    for k, (t0, t1) in enumerate(zip(times, edges)):
        u = np.array([vals[k] for vals in values])
        x = phi(t1 - t0) @ x + gamma(t1 - t0) @ u
    return x


def test_open_loop_against_exact_propagation():
    rng = np.random.default_rng(11)
    n, dt, t_end = 4, 1e-2, 3.0
    times = np.arange(0, 300, 25) * dt
    values = [rng.uniform(-1, 1, times.size) for _ in range(n)]
    u = tuple(Signal.piecewise_constant(times, v) for v in values)
    x0 = rng.uniform(-1, 1, n)
    traj = open_loop_chain(n, u, x0, t_end, dt)
    exact = _exact_propagation(n, x0, times, values, t_end)
    assert np.allclose(traj.x[-1], exact, rtol=1e-12, atol=1e-12)
