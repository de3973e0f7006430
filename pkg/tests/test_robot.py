import numpy as np
import pytest

from ncs_stability.analyzer import SystemBounds, robot_bounds
from ncs_stability.robot import (
    RobotParams,
    StateDomain,
    bias_terms,
    channel_ratio_suprema,
    closed_loop_f,
    estimate_Mk,
    gamma,
    inertia_matrix,
    make_rhs,
    undelayed_f,
    verify_assumptions,
    zero_pattern,
)

P = RobotParams()
DOMAIN = StateDomain.default(P)


def samples(seed, size=1000):
    rng = np.random.default_rng(seed)
    return DOMAIN.sample(rng, size), DOMAIN.sample(rng, (4, size))


def test_inertia_values():
    assert np.allclose(inertia_matrix(P, 0.0), [[1.023, 0.288], [0.288, 0.128]])
    assert np.allclose(inertia_matrix(P, np.pi / 2), [[0.703, 0.128], [0.128, 0.128]])


def test_inertia_positive_definite_on_grid():
    q2 = np.linspace(-np.pi, np.pi, 10_000)
    ev = np.linalg.eigvalsh(inertia_matrix(P, q2))
    assert np.all(ev > 0)


def test_bias_at_rest():
    assert np.allclose(bias_terms(P, np.zeros(4)), [(1.5 + 0.8) * 9.8 * 0.5 + 0.8 * 9.8 * 0.4, 0.8 * 9.8 * 0.4])


def test_collapse_to_linear_error_dynamics():
    x, _ = samples(0)
    A = P.error_dynamics()
    assert np.allclose(undelayed_f(P, x), (x - P.equilibrium) @ A.T, atol=1e-9, rtol=0)


def test_collapse_with_setpoints():
    p = RobotParams(qd1=0.4, qd2=-0.7)
    x = StateDomain.default(p).sample(np.random.default_rng(1), 200)
    assert np.allclose(undelayed_f(p, x), (x - p.equilibrium) @ p.error_dynamics().T, atol=1e-9, rtol=0)


def test_telescoping_identity():
    x, d = samples(2)
    total = closed_loop_f(P, 0.0, x, *d)
    parts = undelayed_f(P, x) + sum(gamma(P, k, x, d) - gamma(P, k + 1, x, d) for k in range(1, 5))
    assert np.allclose(total, parts, atol=1e-9, rtol=0)
    assert np.allclose(gamma(P, 1, x, d), total)


def test_undelayed_channel_difference_vanishes():
    x, d = samples(3, 100)
    for k in range(1, 5):
        d_k = d.copy()
        d_k[k - 1] = x
        assert np.allclose(gamma(P, k, x, d_k), gamma(P, k + 1, x, d_k), atol=1e-12)


def test_delay_only_touches_acceleration_rows():
    x, d = samples(4, 100)
    f = closed_loop_f(P, 0.0, x, *d)
    assert np.array_equal(f[:, 0], x[:, 1])
    assert np.array_equal(f[:, 2], x[:, 3])


def test_zero_pattern():
    assert zero_pattern(1).sum() == 4
    assert zero_pattern(1)[1, 0] and not zero_pattern(1)[1, 2]
    assert zero_pattern(4)[3, 3] and not zero_pattern(4)[0, 3]


def test_suprema_exact_for_linear_field():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(2, 3, 3))
    dom = StateDomain(-np.ones(3), np.ones(3))

    def f(x, delayed):
        return np.einsum("kij,ksj->si", B, delayed)

    sup = channel_ratio_suprema(f, 2, dom, 50, seed=1)
    assert np.allclose(sup, np.abs(B), atol=1e-12)


def test_Mk_structure_and_monotone_in_samples():
    small = estimate_Mk(P, DOMAIN, sample_count=500, seed=0)
    large = estimate_Mk(P, DOMAIN, sample_count=1000, seed=0)
    for k, (a, b) in enumerate(zip(small, large), 1):
        assert np.all(a[~zero_pattern(k)] == 0)
        assert np.all(b >= a)
    with pytest.raises(ValueError):
        estimate_Mk(P, DOMAIN, 10, margin=0.5)


def test_estimated_bounds_hold_on_fresh_samples():
    M = estimate_Mk(P, DOMAIN, sample_count=4000, seed=0)
    base = robot_bounds(1e-3)
    rep = verify_assumptions(SystemBounds(base.F, base.W, base.S, tuple(M), base.r), P, DOMAIN, 2000, seed=9)
    assert rep.count("channel") == 0


def test_fixture_audit():
    rep = verify_assumptions(robot_bounds(1e-3), P, DOMAIN, 2000, seed=0)
    assert rep.count("gradient") == 0
    assert rep.count("growth") == 0
    assert rep.count("channel") == 0
    summary = rep.summary()
    assert set(summary) == {"decay", "gradient", "growth", "channel"}


def test_forced_growth_violation_is_reported():
    b = robot_bounds(1e-3)
    weak = SystemBounds(0.5 * b.F, b.W, b.S, b.M, b.r)
    rep = verify_assumptions(weak, P, DOMAIN, 500, seed=0)
    assert rep.count("growth") > 0
    w = rep.summary()["growth"]["witnesses"][0]
    assert w["lhs"] > w["rhs"]
    assert not rep.ok


def test_params_validation():
    with pytest.raises(ValueError):
        RobotParams(m1=0.0)
    with pytest.raises(ValueError):
        RobotParams(n2_form="other")
    with pytest.raises(ValueError):
        StateDomain([0.0, 1.0], [1.0, 1.0])


def test_compiled_rhs_matches_vectorized():
    x, d = samples(5, 50)
    for form in ("linear", "coriolis"):
        p = RobotParams(n2_form=form)
        rhs = make_rhs(p)
        ref = closed_loop_f(p, 0.0, x, *d)
        got = np.array([rhs(0.0, x[s], d[:, s]) for s in range(50)])
        assert np.allclose(got, ref, atol=1e-12)


def test_n2_forms_differ_only_in_velocity_term():
    x = np.array([0.1, 0.3, 0.2, -0.1])
    a = bias_terms(RobotParams(), x)
    b = bias_terms(RobotParams(n2_form="coriolis"), x)
    assert a[0] == b[0]
    assert a[1] - b[1] == pytest.approx(0.8 * 0.5 * 0.4 * (0.3 - 0.09) * np.sin(0.2))
