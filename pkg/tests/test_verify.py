import dataclasses
import math

import numpy as np
import pytest

from delayfb.delayop import estimator_constants, example31_constants
from delayfb.errors import BadBracketError, ConfigurationError
from delayfb.gains import (
    auto_gain_certificate,
    example31_certificate,
    max_certified_step,
    scaled_design,
    step_certificate,
    unscaled_design,
)
from delayfb.simcore import History, Plant, Signal, chain_plant, example31_plant, simulate_cascade, simulate_chain
from delayfb.verify import (
    ChainSetup,
    check_cascade_envelope,
    check_estimator_bound,
    check_fading_memory,
    classify_step,
    empirical_max_step,
    example31_setup,
    fading_memory_trials,
    weighted_sup,
)


@pytest.fixture(scope="module")
def n2():
    gc = auto_gain_certificate(2)
    ec = estimator_constants(2)
    h = max_certified_step(gc, ec)
    return gc, ec, h, step_certificate(gc, ec, h)


# --------------------------------------------------------------------------
# weighted supremum


def test_weighted_sup_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10):
        vals = rng.normal(size=300)
        dt, mu = 0.01, rng.uniform(0.1, 3.0)
        fast = weighted_sup(vals, dt, mu)
        t = np.arange(vals.size) * dt
        slow = np.array([np.max(np.exp(-mu * (t[i] - t[: i + 1])) * np.abs(vals[: i + 1]))
                         for i in range(vals.size)])
        assert np.allclose(fast, slow, rtol=1e-9, atol=0)


def test_weighted_sup_seed():
    out = weighted_sup([0.0, 0.0], 1.0, math.log(2.0), seed=4.0)
    assert np.allclose(out, [4.0, 2.0])


# --------------------------------------------------------------------------
# fading memory


def test_fading_memory_example31_is_vacuous():
    gc, ec = example31_certificate(), example31_constants()
    cert = step_certificate(gc, ec, 4.0e-4)
    traj = simulate_chain(example31_plant(), gc.k, 4.0e-4, History.example31(), T_end=0.2, dt=1e-4)
    rep = check_fading_memory(traj, cert, gc)
    assert rep.passed and rep.max_ratio == 0.0 and rep.vacuous


def test_fading_memory_zero_trajectory(n2):
    gc, _, h, cert = n2
    traj = simulate_chain(chain_plant(2), gc.k, h, History.constant([0.0, 0.0]), T_end=0.5, dt=h / 4)
    rep = check_fading_memory(traj, cert, gc)
    assert rep.passed and rep.max_ratio == 0.0 and not rep.vacuous


def test_fading_memory_random_runs(n2):
    gc, ec, h, _ = n2
    reps = fading_memory_trials(gc, ec, h, runs=5, seed=1, T_end=2.0)
    assert all(r.passed and not r.vacuous for r in reps)
    assert all(0.0 < r.max_ratio <= 1.0 for r in reps)


def test_fading_memory_negative_control(n2):
    gc, _, h, cert = n2
    traj = simulate_chain(chain_plant(2), gc.k, h, History.constant([1.0, -0.5]), T_end=2.0, dt=h / 4,
                          sampling="continuous")
    rep = check_fading_memory(traj, cert, gc)
    # shrink Q0 to the tightest value the run allows, then halve it
    tight = dataclasses.replace(cert, Q0=cert.Q0 * rep.max_ratio)
    assert check_fading_memory(traj, tight, gc).max_ratio == pytest.approx(1.0, rel=1e-9)
    halved = dataclasses.replace(tight, Q0=tight.Q0 / 2)
    bad = check_fading_memory(traj, halved, gc)
    assert not bad.passed and bad.max_ratio == pytest.approx(2.0, rel=1e-9)


def test_fading_memory_noise_seeded_from_history(n2):
    gc, _, h, cert = n2
    # noise only before t = 0: the supremum must still see it
    e = Signal.piecewise_constant((-1.0, 0.0), (1e-3, 0.0))
    traj = simulate_chain(chain_plant(2), gc.k, h, History.constant([0.0, 0.0]), e=e, T_end=0.5, dt=h / 4,
                          sampling="continuous")
    assert np.abs(traj.x).max() > 0
    rep = check_fading_memory(traj, cert, gc, e=e)
    assert rep.passed and rep.max_ratio > 0


def test_fading_memory_errors(n2):
    gc, ec, h, cert = n2
    traj = simulate_chain(chain_plant(2), gc.k, h / 2, History.constant([1.0, 0.0]), T_end=0.1, dt=h / 8)
    with pytest.raises(ConfigurationError):
        check_fading_memory(traj, cert, gc)
    with pytest.raises(ConfigurationError):
        check_fading_memory(traj, step_certificate(gc, ec, 0.5), gc)


# --------------------------------------------------------------------------
# cascade envelope on a fixture with finite constants


def _fixture_plant():
    # z' = -z + 0.1 x1, g = 0: V(z) = |z| decays at rate 1 with gain 0.1
    return Plant("cascade", 2, kz=1, f=lambda d, z, x: np.array([-z[0] + 0.1 * x[0]]),
                 g=None, name="fixture")


@pytest.fixture(scope="module")
def fixture_design(n2):
    gc, ec, b, _ = n2
    return scaled_design(gc, ec, b, gamma=0.1, Lhyp=0.0, cz=1.0, r=2.0)


def _cascade(design, z0, hist, e=None):
    return simulate_cascade(_fixture_plant(), design, z0, hist, e=e, T_end=3.0, dt=design.h / 4,
                            sampling="continuous")


def test_cascade_envelope_fixture(fixture_design):
    assert fixture_design.Rb == 1.0
    traj = _cascade(fixture_design, (0.5,), History.constant([1.0, -1.0]))
    rep = check_cascade_envelope(traj, fixture_design, lambda z: abs(z[0]), lambda s: s)
    assert rep.passed and 0.0 < rep.max_ratio <= 1.0 and not rep.vacuous


def test_cascade_envelope_zero(fixture_design):
    traj = _cascade(fixture_design, (0.0,), History.constant([0.0, 0.0]))
    rep = check_cascade_envelope(traj, fixture_design, lambda z: abs(z[0]), lambda s: s)
    assert rep.passed and rep.max_ratio == 0.0


def test_cascade_envelope_constant_noise(fixture_design):
    e = Signal.constant(0.01)
    traj = _cascade(fixture_design, (0.0,), History.constant([0.0, 0.0]), e=e)
    rep = check_cascade_envelope(traj, fixture_design, lambda z: abs(z[0]), lambda s: s, e=e)
    assert rep.passed and 0.0 < rep.max_ratio <= 1.0


def test_cascade_envelope_errors(fixture_design):
    plain = unscaled_design(fixture_design.k, fixture_design.h)
    traj = _cascade(fixture_design, (0.5,), History.constant([1.0, 0.0]))
    with pytest.raises(ConfigurationError):
        check_cascade_envelope(traj, plain, abs, abs)
    chain = simulate_chain(chain_plant(2), fixture_design.k, fixture_design.h, History.constant([1.0, 0.0]),
                           T_end=0.1, dt=fixture_design.h / 4)
    with pytest.raises(ConfigurationError):
        check_cascade_envelope(chain, fixture_design, abs, abs)


# --------------------------------------------------------------------------
# estimator bound


def test_estimator_bound_without_inputs():
    rep = check_estimator_bound(3, 0.1, runs=10, input_bound=0.0)
    assert rep.passed and rep.details["violations"] == 0


def test_estimator_bound_n2_generic():
    rep = check_estimator_bound(2, 0.1, runs=100, seed=4)
    assert rep.passed and rep.details["checked"] > 0
    assert rep.details["K"] == list(estimator_constants(2).K)


def test_estimator_bound_last_channel_uses_preset():
    for h in (0.1, 0.5, 1.0):
        rep = check_estimator_bound(3, h, runs=20, channels=(3,))
        assert rep.passed and rep.details["K"][-1] == math.sqrt(136)


def test_estimator_bound_negative_control():
    ec = example31_constants()
    small = dataclasses.replace(ec, K=tuple(k / 1000 for k in ec.K))
    rep = check_estimator_bound(3, 0.1, runs=5, constants=small)
    assert not rep.passed and rep.details["violations"] > 0


# --------------------------------------------------------------------------
# empirical boundary


@pytest.fixture(scope="module")
def ex31_boundary():
    return empirical_max_step(example31_setup(), 0.05, 0.5)


def test_classifier_near_boundary():
    setup = example31_setup()
    assert classify_step(setup, 0.19) == "stable"
    assert classify_step(setup, 0.23) == "unstable"


def test_bad_bracket():
    quick = example31_setup(T_end=20.0, dt_div=4)
    with pytest.raises(BadBracketError):
        empirical_max_step(quick, 0.01, 0.05)
    with pytest.raises(BadBracketError):
        empirical_max_step(quick, 0.3, 0.5)


def test_boundary_example31(ex31_boundary):
    assert 0.19 <= ex31_boundary <= 0.23


def test_boundary_monotone_in_bracket(ex31_boundary):
    lo, hi = ex31_boundary - 0.02, ex31_boundary + 0.03
    narrow = empirical_max_step(example31_setup(), lo, hi)
    assert lo <= narrow <= hi
    assert abs(narrow - ex31_boundary) <= 5e-3


def _sampled_data_radius(k, h):
    # exact one-step map of the n=2 chain under the held control, with the
    # previous output sample as extra state
    phi = np.array([[1.0, h], [0.0, 1.0]])
    gam = np.array([h * h / 2, h])
    c0, c1 = k[0] + k[1] / h, -k[1] / h
    m = np.zeros((3, 3))
    m[:2, :2] = phi
    m[:2, 0] += gam * c0
    m[:2, 2] += gam * c1
    m[2, 0] = 1.0
    return max(abs(np.linalg.eigvals(m)))


def test_boundary_n2_against_spectral_grid():
    k = (-1.0, -2.0)
    hs = np.linspace(0.01, 1.5, 200)
    radius = np.array([_sampled_data_radius(k, h) for h in hs])
    grid_boundary = hs[np.argmax(radius >= 1.0)]
    setup = ChainSetup(chain_plant(2), k, History((Signal.constant(1.0), Signal.zero())))
    found = empirical_max_step(setup, 0.05, 1.5)
    # slow decay near the boundary is classified as marginal, so the
    # bisection may sit slightly below the spectral crossing
    assert grid_boundary - 0.02 <= found <= grid_boundary + 5e-3
