import numpy as np
import pytest

from fxtiss.analysis import gradient_consistency_check, max_gradient_error
from fxtiss.certificate import curvature_condition
from fxtiss.sim import IntegratorOptions, integrate
from fxtiss.systems import (
    AS_PRINTED,
    HOMOG_IC,
    PlantConfig,
    PowerInterconnection,
    QuadraticCost,
    ExoConfig,
    make_exponential_control,
    make_feedback_opt_loop,
    make_homogeneous_example,
    make_nes_loop,
    make_plant,
    nash_equilibrium,
    plant_decay_rate,
    quarter_decay_route,
    quadratic_subsystems,
    quasi_steady_optimizer,
    sg,
)

FBK_A1 = [[1.5, 0.3], [0.3, 1.8]]
FBK_A2 = [[1.4, 0.25], [0.25, 1.6]]


def test_signed_power():
    assert sg(-8.0, 1 / 3) == pytest.approx(-2.0)
    assert sg(0.0, 0.5) == 0.0
    np.testing.assert_allclose(sg(np.array([-4.0, 9.0]), 0.5), [-2.0, 3.0])


# --- homogeneous interconnection ---

def test_homog_field_equilibrium():
    ex = make_homogeneous_example()
    np.testing.assert_array_equal(ex.system.field(0, np.zeros(2)), [0, 0])


def test_homog_field_hand_value():
    ex = make_homogeneous_example()
    np.testing.assert_allclose(ex.system.field(0, np.array([1.0, 1.0])), [-1.0, -2.1], rtol=1e-14)


def test_homog_as_printed_variant():
    ex = make_homogeneous_example(AS_PRINTED)
    # +sg(y)^2 instead of -sg(y)^2
    np.testing.assert_allclose(ex.system.field(0, np.array([1.0, 1.0])), [-1.0, -0.1], rtol=1e-14)
    assert ex.subsystems is None


def test_homog_unknown_variant():
    with pytest.raises(ValueError):
        make_homogeneous_example("flipped")


def test_homog_settles_from_reference_ic():
    ex = make_homogeneous_example()
    tr = integrate(ex.system, HOMOG_IC, IntegratorOptions(horizon=10))
    assert tr.terminated == "settled"
    assert np.all(np.isfinite(tr.states))


def test_homog_batch_field_matches_pointwise():
    ex = make_homogeneous_example()
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 50)) * 10
    U = rng.normal(size=(2, 50))
    batch = ex.model.field_with_input(X, U)
    for k in range(50):
        np.testing.assert_allclose(batch[:, k], ex.model.field_with_input(X[:, k], U[:, k]), rtol=1e-13)


def test_homog_subsystem_rates_from_quadratic():
    ex = make_homogeneous_example()
    r1, r2 = ex.sub1.rate, ex.sub2.rate
    assert (r1.p, r1.q) == pytest.approx((2 / 3, 2))
    assert (r2.p, r2.q) == pytest.approx((3 / 4, 3 / 2))
    for sub in ex.subsystems:
        x = np.array([0.7, -1.3])
        # the gradient of V matches finite differences
        g = sub.lyapunov_grad(x)
        h = 1e-6
        fd = [(sub.lyapunov(x + h * e) - sub.lyapunov(x - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_generic_interconnection_derives_subsystems():
    model = PowerInterconnection(((1, 0.5), (1, 2)), ((0.1, 1.0),), ((1, 0.5), (1, 2)), ((0.1, 1.0),))
    subs = quadratic_subsystems(model)
    assert len(subs) == 2 and all(s.rate is not None for s in subs)


def test_quarter_decay_route_flags_product():
    route = quarter_decay_route(make_homogeneous_example().model)
    assert not route.bound.hypotheses_ok
    assert any("1.5625" in w for w in route.bound.warnings)
    assert not route.valid


# --- plant ---

def test_plant_equilibrium_manifold():
    pl = make_plant(PlantConfig(FBK_A1, FBK_A2, 1.1, 0.5, -0.5, gamma=1.4))
    u = np.array([0.3, -2.0])
    np.testing.assert_array_equal(pl.rhs(pl.h(u), u), [0, 0])


def test_plant_scalar_hand_value():
    pl = make_plant(PlantConfig(np.eye(1), np.eye(1), 1.0, 0.5, -0.5))
    assert pl.rhs(np.array([4.0]), np.array([0.0]))[0] == pytest.approx(-10.0)


def test_plant_definiteness_checked():
    with pytest.raises(ValueError):
        PlantConfig([[1, 0], [0, -1]], np.eye(2), 1.0, 0.5, -0.5)
    with pytest.raises(ValueError):
        PlantConfig(np.eye(2), np.eye(2), 1.0, 1.5, -0.5)
    with pytest.raises(ValueError):
        PlantConfig(np.eye(2), np.eye(2), 1.0, 0.5, 0.5)


def test_feedback_plant_gamma_attached():
    loop = make_feedback_opt_loop()
    assert loop.plant.gamma == pytest.approx(7 / 5)
    assert loop.plant.ell == pytest.approx(1.1)
    np.testing.assert_allclose(loop.plant.cfg.A1, FBK_A1)


def test_plant_rate_derivation_rejects_feedback_data():
    # the quadratic-Lyapunov rate derivation does not close for this plant
    loop = make_feedback_opt_loop()
    with pytest.raises(ValueError):
        plant_decay_rate(loop.plant.cfg)


# --- exosystem ---

def test_exo_validation():
    with pytest.raises(ValueError):
        ExoConfig((1, 2), (1,), 0.3)
    with pytest.raises(ValueError):
        ExoConfig((1,), (-1,), 0.3)
    with pytest.raises(ValueError):
        ExoConfig((1,), (1,), -0.1)


def test_exo_reproduces_sinusoids():
    eps0 = 0.7
    loop = make_feedback_opt_loop(eps0)
    exo = loop.exo
    from fxtiss.sim import SystemDef

    sys = SystemDef(exo.dimension, lambda t, th: exo.field(th), None)
    opts = IntegratorOptions(horizon=10, stop_on_settle=False, max_step=0.01)
    tr = integrate(sys, exo.initial_state(), opts)
    # 100 stored samples spread over the horizon
    idx = np.unique(np.linspace(0, len(tr.times) - 1, 100).astype(int))
    assert idx.size == 100
    ts = tr.times[idx]
    np.testing.assert_allclose(tr.states[idx, 1], 0.5 * np.sin(2 * eps0 * ts), atol=1e-6)
    for k in idx:
        np.testing.assert_allclose(exo.disturbances(tr.states[k]), exo.exact_disturbances(tr.times[k]), atol=1e-6)


# --- feedback optimization ---

def test_feedback_defaults():
    loop = make_feedback_opt_loop()
    assert (loop.xi1, loop.xi2) == (pytest.approx(1 / 3), pytest.approx(-1 / 5))
    assert loop.system.dimension == 10


@pytest.mark.parametrize("xi1, xi2", [(0, -0.2), (1, -0.2), (0.5, 0), (0.5, 0.3)])
def test_feedback_exponent_range(xi1, xi2):
    with pytest.raises(ValueError):
        make_feedback_opt_loop(0.0, xi1, xi2)


def test_feedback_gradient_at_origin():
    loop = make_feedback_opt_loop()
    np.testing.assert_allclose(loop.pseudo_gradient(np.zeros(2), np.zeros(2), np.zeros(6)), [3.7, 1.6])


def test_feedback_matrices_follow_disturbances():
    loop = make_feedback_opt_loop()
    th = np.array([0, 0.2, 0, -0.1, 0, 0.05])
    Q, P = loop.matrices(th)
    np.testing.assert_allclose(Q, [[1.2, 0.5], [0.5, 0.9]])
    np.testing.assert_allclose(P, [[3.5, 0.2], [0.2, 3.25]])


def test_quasi_steady_optimizer_linear_solve():
    loop = make_feedback_opt_loop()
    H = 1.21 * loop.cost.Q + loop.cost.P
    np.testing.assert_allclose(quasi_steady_optimizer(np.zeros(6)), -np.linalg.solve(H, [3.7, 1.6]), rtol=1e-14)


def test_quasi_steady_optimizer_shift_in_c():
    delta = np.array([0.3, -0.2])
    base = make_feedback_opt_loop()
    moved = make_feedback_opt_loop(cost=QuadraticCost(base.cost.Q, base.cost.P, base.cost.c + delta, base.cost.d))
    th = np.array([0.5, 0.1, 0.2, -0.3, 0.1, 0.05])
    Q, P = base.matrices(th)
    shift = moved.quasi_steady_optimizer(th) - base.quasi_steady_optimizer(th)
    np.testing.assert_allclose(shift, -np.linalg.solve(1.21 * Q + P, 1.1 * delta), rtol=1e-12)


def test_quasi_steady_optimizer_is_stationary():
    loop = make_feedback_opt_loop()
    rng = np.random.default_rng(5)
    for _ in range(5):
        th = rng.uniform(-0.3, 0.3, 6)
        u = loop.quasi_steady_optimizer(th)
        h = 1e-6
        fd = [(loop.quasi_steady_cost(u + h * e, th) - loop.quasi_steady_cost(u - h * e, th)) / (2 * h)
              for e in np.eye(2)]
        assert np.linalg.norm(fd) < 1e-8


def test_feedback_target_is_equilibrium():
    loop = make_feedback_opt_loop(0.0)
    s = loop.initial_state((1, 1, 1, 1))
    tgt = loop.target(0.0, s)
    assert np.linalg.norm(loop.system.field(0.0, tgt)) < 1e-10


def test_feedback_settles_at_zero_rate():
    loop = make_feedback_opt_loop(0.0)
    tr = integrate(loop.system, loop.initial_state((1, 1, 1, 1)), IntegratorOptions(horizon=20))
    assert tr.terminated == "settled"
    assert loop.tracking_error(tr.times[-1], tr.final) < 1e-8


def test_feedback_curvature():
    c = make_feedback_opt_loop().curvature()
    assert c.satisfied and c.margin == pytest.approx(0.0225, abs=1e-6)


# --- Nash seeking ---

def test_nes_defaults_and_gradient_at_origin():
    loop = make_nes_loop()
    assert (loop.xi1, loop.xi2) == (pytest.approx(1 / 3), pytest.approx(-1 / 5))
    np.testing.assert_allclose(loop.pseudo_gradient(np.zeros(2), np.zeros(2)), [1.0, 1.3])


def test_nes_potential_matrix():
    np.testing.assert_allclose(make_nes_loop().potential_matrix, [[4.25, 1.125], [1.125, 3.375]])


def test_nash_equilibrium_residual():
    u = nash_equilibrium()
    Q = np.array([[4.25, 1.125], [1.125, 3.375]])
    assert np.linalg.norm(Q @ u + [1.0, 1.3]) < 1e-12
    np.testing.assert_allclose(u, -np.linalg.solve(Q, [1.0, 1.3]), rtol=1e-14)
    np.testing.assert_allclose(u, [-0.146, -0.336], atol=1e-3)


def test_nash_potential_stationary():
    loop = make_nes_loop()
    u = loop.u_star
    h = 1e-6
    fd = [(loop.potential(u + h * e) - loop.potential(u - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.linalg.norm(fd) < 1e-8


def test_nes_target_is_equilibrium():
    loop = make_nes_loop()
    assert np.linalg.norm(loop.system.field(0.0, loop.target)) < 1e-10


def test_nes_rejects_non_gradient_game():
    with pytest.raises(ValueError):
        make_nes_loop(Q=[[1, 0.5], [0.2, 1.5]])


def test_nes_curvature():
    c = make_nes_loop().curvature()
    assert c.satisfied and c.margin == pytest.approx(2.605 - 2 * 1.257 * 1.01, abs=2e-3)
    # the cross-check with the rounded published constants
    assert curvature_condition(2.605, 1.257, 0.5, 0.51, 2)


@pytest.mark.parametrize("make", [make_feedback_opt_loop, make_nes_loop])
def test_gradient_matches_reduced_cost(make):
    assert gradient_consistency_check(make()) < 1e-6


def test_gradient_detector_calibration():
    A = np.array([[2.0, 0.3], [0.3, 1.0]])

    def cost(u):
        return 0.5 * u @ A @ u

    pts = np.random.default_rng(1).normal(size=(20, 2))
    err = max_gradient_error(lambda u: 1.001 * (A @ u), cost, pts)
    assert err == pytest.approx(1e-3, rel=1e-3)


def test_exponential_control():
    sys = make_exponential_control(3)
    np.testing.assert_allclose(sys.field(0, np.ones(3)), -np.ones(3))
