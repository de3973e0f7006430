import numpy as np
import pytest

from ncs_stability.analyzer import (
    SystemBounds,
    build_certificate,
    check_stability,
    companion_error_dynamics,
    max_delay_bound,
    robot_bounds,
    synthesize_lyapunov,
    certificate_layout,
)
from ncs_stability.lmi import evaluate_block
from ncs_stability.sdp import FEASIBLE


def test_layout_has_168_scalars_for_robot():
    assert certificate_layout(4, 4).total_scalars == 168
    prob = build_certificate(robot_bounds(0.5e-3))
    assert prob.m == 168
    assert [b.name for b in prob.constraints] == ["coupling_1", "coupling_2", "coupling_3", "coupling_4", "decay"]


def test_no_channels_reduces_to_decay_block():
    b = SystemBounds(np.array([[0.5]]), np.array([[1.0]]), np.array([[2.0]]), (), ())
    prob = build_certificate(b)
    assert prob.m == 2
    assert prob.block_dims() == [2]
    assert check_stability(b).status == FEASIBLE


def test_zero_delay_channels_drop_out():
    b = robot_bounds(1e-3).with_delays((0.0, 2e-3, 0.0, 2e-3))
    prob = build_certificate(b)
    assert prob.block_dims() == [12, 12, 8]
    assert check_stability(robot_bounds(1e-3).with_delays(0.0)).feasible


def test_decay_block_matches_direct_assembly():
    rng = np.random.default_rng(5)
    bounds = robot_bounds(0.6e-3)
    prob = build_certificate(bounds)
    lay = prob.layout
    x = rng.normal(size=prob.m)
    val = lambda name: lay.value(name, x)
    F, S = bounds.F, bounds.S
    Y1, Y2 = val("Y1"), val("Y2")
    p11 = -S + 2 * Y1 @ F
    p12 = F.T @ Y2 + Y1
    p22 = -2 * Y2
    for k in range(1, 5):
        r = bounds.r[k - 1]
        p11 = p11 + r * val(f"X11_{k}")
        p12 = p12 + r * val(f"X12_{k}")
        p22 = p22 + r * (val(f"X22_{k}") + val(f"R{k}"))
    phi = np.block([[p11, p12], [p12.T, p22]])
    got = evaluate_block(prob.constraints[-1], x)
    assert np.allclose(got, 0.5 * (phi + phi.T), atol=1e-12)
    # same quadratic form as the unsymmetrized matrix
    v = rng.normal(size=8)
    assert v @ got @ v == pytest.approx(v @ phi @ v)


@pytest.mark.parametrize("w_transpose", [True, False])
def test_coupling_block_top_right(w_transpose):
    rng = np.random.default_rng(2)
    bounds = robot_bounds(0.6e-3)
    W = rng.uniform(size=(4, 4))
    bounds = SystemBounds(bounds.F, W, bounds.S, bounds.M, bounds.r)
    prob = build_certificate(bounds, w_transpose=w_transpose)
    x = rng.normal(size=prob.m)
    Y1 = prob.layout.value("Y1", x)
    Wc = W.T if w_transpose else W
    got = evaluate_block(prob.constraints[1], x)[:4, 8:]
    assert np.allclose(got, -Wc @ bounds.M[1] - Y1 @ bounds.M[1])


def test_robot_verdicts():
    assert check_stability(robot_bounds(1e-9)).feasible
    v = check_stability(robot_bounds(0.79e-3))
    assert v.feasible and v.margin > 0
    assert not check_stability(robot_bounds(5e-3)).feasible


def test_bounds_validation():
    b = robot_bounds(1e-3)
    with pytest.raises(ValueError, match="positive definite"):
        SystemBounds(b.F, b.W, -b.S, b.M, b.r)
    with pytest.raises(ValueError, match="non-negative"):
        SystemBounds(-b.F, b.W, b.S, b.M, b.r)
    with pytest.raises(ValueError):
        SystemBounds(b.F, b.W, b.S, b.M, b.r[:2])
    with pytest.raises(ValueError):
        b.with_delays(-1.0)


def scalar_family(T):
    return SystemBounds(np.array([[1.0]]), np.array([[1.0]]), np.array([[4.0]]), (np.array([[2.0]]),), (T,))


def test_bisection_brackets_threshold():
    res = max_delay_bound(scalar_family, 1e-3, 1.0, tol=1e-4)
    assert res.monotone()
    assert res.t_hi - res.t_star <= 1e-4
    assert check_stability(scalar_family(res.t_star)).feasible
    assert not check_stability(scalar_family(res.t_hi)).feasible
    assert all(T < 1.0 for T, _ in res.probes)


def test_bisection_rejects_uncertifiable_lower_end():
    with pytest.raises(ValueError, match="lower bound"):
        max_delay_bound(scalar_family, 0.9, 1.0)
    with pytest.raises(ValueError):
        max_delay_bound(scalar_family, 1.0, 0.5)


def test_integral_inequality_trapezoid():
    """-int xd' X33 xd <= int [x(t); x(t-h); xd]' X~ [...] with X~ = X except a zero (3,3) block."""
    rng = np.random.default_rng(11)
    n, N = 2, 1000
    for _ in range(20):
        G = rng.normal(size=(3 * n, 3 * n))
        X = G @ G.T
        h = rng.uniform(0.1, 2.0)
        s = np.linspace(-h, 0.0, N + 1)
        a, w, ph = rng.normal(size=(3, n))
        xs = a[:, None] * np.sin(w[:, None] * s + ph[:, None])
        dxs = (a * w)[:, None] * np.cos(w[:, None] * s + ph[:, None])
        z = np.concatenate([xs[:, -1], xs[:, 0]])
        Xt = X.copy()
        Xt[2 * n :, 2 * n :] = 0.0
        stack = np.vstack([np.repeat(z[:, None], N + 1, axis=1), dxs])
        lhs = -np.trapezoid(np.einsum("is,ij,js->s", dxs, X[2 * n :, 2 * n :], dxs), s)
        rhs = np.trapezoid(np.einsum("is,ij,js->s", stack, Xt, stack), s)
        assert rhs - lhs >= -1e-6


def test_lyapunov_robot_matches_published_values():
    cert = synthesize_lyapunov(companion_error_dynamics([2.55, 2.55], [3.16, 3.16]))
    assert 0.78 <= cert.alpha <= 0.83
    assert np.allclose(cert.P[:2, :2], [[0.9796, 0.1271], [0.1271, 0.2074]], atol=5e-2)
    assert cert.violations(tol=1e-9) == []


def test_lyapunov_minus_identity():
    cert = synthesize_lyapunov(-np.eye(2))
    assert cert.alpha == pytest.approx(2.0, abs=1e-5)
    assert np.allclose(cert.P, np.eye(2), atol=1e-4)


def test_lyapunov_diagonal_non_unique_P():
    # the optimum alpha = 2 is attained by a family of P; only p11 is pinned
    cert = synthesize_lyapunov(np.diag([-1.0, -2.0]))
    assert cert.alpha == pytest.approx(2.0, abs=1e-5)
    assert cert.P[0, 0] == pytest.approx(1.0, abs=1e-4)
    assert cert.P[0, 1] == pytest.approx(0.0, abs=1e-4)
    assert cert.violations(tol=1e-9) == []


def test_lyapunov_rejects_unstable():
    with pytest.raises(ValueError, match="Hurwitz"):
        synthesize_lyapunov(np.diag([1.0, -1.0]))


def test_certificate_bar_inequality():
    # off-diagonal Q <= 0 gives x'Qx >= |x|'Q|x|
    cert = synthesize_lyapunov(companion_error_dynamics([2.55, 2.55], [3.16, 3.16]))
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(1000, 4))
    lhs = np.einsum("si,ij,sj->s", xs, cert.Q, xs)
    rhs = np.einsum("si,ij,sj->s", np.abs(xs), cert.Q, np.abs(xs))
    assert np.all(lhs >= rhs - 1e-12)
    assert np.array_equal(cert.W, np.abs(cert.P))
