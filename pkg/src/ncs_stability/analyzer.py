"""Delay-dependent stability certificates for networked nonlinear systems.

The certificate consumes the bound matrices of a closed loop
``dx/dt = f(t, x, x(t - d_1), ..., x(t - d_q))``:

* ``S``: decay of ``V1`` along the undelayed dynamics,
  ``dV1/dt <= -|x|^T S |x|``;
* ``W``: gradient bound ``|dV1/dx| <= 2 |x|^T W^T``;
* ``F``: ``|f(t, x, ..., x)| <= F |x|``;
* ``M_k``: Lipschitz-like bound of the perturbation caused by delaying
  channel ``k``;
* ``r_k``: upper bound on the delay of channel ``k``.

:func:`build_certificate` assembles the LMIs whose feasibility implies
asymptotic stability for every delay pattern with ``d_k(t) <= r_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .lmi import AffineExpr, LmiProblem, VariableLayout
from .matrix_core import check_matrix, check_symmetric, elementwise_abs, min_eigenvalue
from .sdp import INCONCLUSIVE, SdpVerdict, SolverConfig, maximize_linear, solve_feasibility

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class SystemBounds:
    F: np.ndarray
    W: np.ndarray
    S: np.ndarray
    M: tuple
    r: tuple

    def __post_init__(self):
        F = check_matrix(self.F, "F", square=True)
        n = F.shape[0]
        W = check_matrix(self.W, "W", square=True)
        S = check_symmetric(self.S, "S")
        M = tuple(check_matrix(Mk, f"M{k + 1}", square=True) for k, Mk in enumerate(self.M))
        r = tuple(float(v) for v in self.r)
        for name, mat in [("W", W), ("S", S)] + [(f"M{k + 1}", Mk) for k, Mk in enumerate(M)]:
            if mat.shape != (n, n):
                raise ValueError(f"{name} has shape {mat.shape}, expected {(n, n)}")
        if len(r) != len(M):
            raise ValueError(f"{len(M)} matrices M_k but {len(r)} delay bounds r_k")
        for name, mat in [("F", F), ("W", W)] + [(f"M{k + 1}", Mk) for k, Mk in enumerate(M)]:
            if np.any(mat < 0):
                raise ValueError(f"{name} must be entrywise non-negative")
        if any(not v >= 0 for v in r):
            raise ValueError("delay bounds r_k must be non-negative")
        if min_eigenvalue(S) <= 0:
            raise ValueError("S must be positive definite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def q(self) -> int:
        return len(self.M)

    def with_delays(self, r) -> "SystemBounds":
        if np.isscalar(r):
            r = [float(r)] * self.q
        return SystemBounds(self.F, self.W, self.S, self.M, tuple(r))


def load_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, comments="#"))


def robot_bounds(T: float, data_dir=DATA_DIR) -> SystemBounds:
    """Robot-arm bounds shipped with the package, with ``r_k = 2 T`` on all four channels."""
    d = Path(data_dir)
    M = tuple(load_matrix(d / f"M{k}.txt") for k in range(1, 5))
    return SystemBounds(load_matrix(d / "F.txt"), load_matrix(d / "W.txt"), load_matrix(d / "S.txt"), M, (2.0 * T,) * 4)


def certificate_layout(n: int, q: int, channels=None) -> VariableLayout:
    """Decision variables; ``channels`` (default ``1..q``) lists the channels that get R, X blocks."""
    channels = list(range(1, q + 1)) if channels is None else list(channels)
    layout = VariableLayout()
    for k in channels:
        layout.add(f"R{k}", "diagonal_positive", n)
    layout.add("Y1", "diagonal_positive", n)
    layout.add("Y2", "diagonal_positive", n)
    for k in channels:
        layout.add(f"X11_{k}", "symmetric_free", n)
        layout.add(f"X12_{k}", "full_free", n)
        layout.add(f"X22_{k}", "symmetric_free", n)
    return layout


def build_certificate(bounds: SystemBounds, w_transpose: bool = True) -> LmiProblem:
    """Assemble the q coupling blocks (psd, 3n) and the decay block (nd, 2n).

    ``w_transpose`` selects ``-W^T M_k`` (default) or ``-W M_k`` in the
    (1,3) entry of the coupling blocks; the two coincide for symmetric W.
    The decay block is posed on its symmetric part, so its (1,1) entry is
    ``-S + Y1 F + F^T Y1 + sum r_k X11_k``.

    A channel with ``r_k = 0`` drops out: its variables would only appear in
    its own coupling block, which can always be met.
    """
    n, q = bounds.n, bounds.q
    active = [k for k in range(1, q + 1) if bounds.r[k - 1] > 0]
    layout = certificate_layout(n, q, active)
    problem = LmiProblem(layout)
    Y1, Y2 = layout.expr("Y1"), layout.expr("Y2")
    F, S = bounds.F, bounds.S
    Wc = bounds.W.T if w_transpose else bounds.W

    phi11 = -S + Y1 @ F + F.T @ Y1
    phi12 = F.T @ Y2 + Y1
    phi22 = -2.0 * Y2
    for k in active:
        Mk, rk = bounds.M[k - 1], bounds.r[k - 1]
        R = layout.expr(f"R{k}")
        X11, X12, X22 = (layout.expr(f"{v}_{k}") for v in ("X11", "X12", "X22"))
        top = -(Wc @ Mk) - Y1 @ Mk
        mid = -(Y2 @ Mk)
        block = AffineExpr.bmat([[X11, X12, top], [X12.T, X22, mid], [top.T, mid.T, R]])
        problem.add(block, "psd", name=f"coupling_{k}")
        phi11 = phi11 + rk * X11
        phi12 = phi12 + rk * X12
        phi22 = phi22 + rk * (X22 + R)
    problem.add(AffineExpr.bmat([[phi11, phi12], [phi12.T, phi22]]), "nd", name="decay")
    return problem


def check_stability(bounds: SystemBounds, config: SolverConfig | None = None, w_transpose: bool = True) -> SdpVerdict:
    """Feasible verdict certifies asymptotic stability for all ``d_k(t) <= r_k``."""
    return solve_feasibility(build_certificate(bounds, w_transpose), config or SolverConfig())


@dataclass
class BoundSearchResult:
    t_star: float
    probes: list
    tolerance: float
    t_hi: float

    @property
    def feasible_at(self):
        return [(T, v) for T, v in self.probes]

    def monotone(self) -> bool:
        ok = [T for T, v in self.probes if v.feasible]
        bad = [T for T, v in self.probes if not v.feasible]
        return not ok or not bad or max(ok) < min(bad)


def max_delay_bound(
    bounds_of_T: Callable[[float], SystemBounds],
    t_lo: float,
    t_hi: float,
    tol: float = 1e-5,
    config: SolverConfig | None = None,
    w_transpose: bool = True,
) -> BoundSearchResult:
    """Bisect the largest control cycle ``T`` for which the certificate holds.

    ``t_hi`` is assumed not certifiable and is not probed. Inconclusive
    verdicts count as failures, which keeps ``t_star`` sound.
    """
    if not 0 < t_lo < t_hi:
        raise ValueError("need 0 < t_lo < t_hi")
    if tol <= 0:
        raise ValueError("tol must be positive")
    config = config or SolverConfig()
    probes = []

    def probe(T):
        verdict = check_stability(bounds_of_T(T), config, w_transpose)
        probes.append((T, verdict))
        log.info("T = %.6g s: %s (margin %.3e)", T, verdict.status, verdict.margin)
        return verdict.feasible

    if not probe(t_lo):
        raise ValueError("system not certifiable even at lower bound t_lo")
    lo, hi = t_lo, t_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return BoundSearchResult(lo, probes, tol, hi)


@dataclass
class LyapunovCertificate:
    """``V1 = x^T P x`` for ``dx/dt = A x`` with ``A^T P + P A <= -Q``."""

    P: np.ndarray
    Q: np.ndarray
    alpha: float
    A: np.ndarray
    verdict: SdpVerdict | None = field(default=None, repr=False)

    @property
    def W(self) -> np.ndarray:
        return elementwise_abs(self.P)

    @property
    def S(self) -> np.ndarray:
        return self.Q.copy()

    @property
    def F(self) -> np.ndarray:
        return elementwise_abs(self.A)

    def violations(self, tol: float = 0.0) -> list[str]:
        """Certificate invariants that fail at tolerance ``tol`` (empty when sound)."""
        out = []
        n = self.A.shape[0]
        if min_eigenvalue(self.P) <= -tol:
            out.append("P is not positive definite")
        if min_eigenvalue(np.eye(n) - self.P) < -tol:
            out.append("P is not <= I")
        if min_eigenvalue(-(self.A.T @ self.P + self.P @ self.A) - self.Q) < -tol:
            out.append("A^T P + P A is not <= -Q")
        if min_eigenvalue(self.Q - self.alpha * np.eye(n)) < -tol:
            out.append("Q is not >= alpha I")
        off = self.Q[~np.eye(n, dtype=bool)]
        if off.size and np.max(off) > tol:
            out.append("Q has positive off-diagonal entries")
        return out


def companion_error_dynamics(alpha, beta) -> np.ndarray:
    """Block-diagonal ``A`` of ``e'' + alpha_i e' + beta_i e = 0`` for state ``[e1, e1', e2, e2', ...]``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    blocks = [np.array([[0.0, 1.0], [-b, -a]]) for a, b in zip(alpha, beta)]
    n = 2 * len(blocks)
    A = np.zeros((n, n))
    for i, B in enumerate(blocks):
        A[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = B
    return A


def lyapunov_problem(A, epsilon: float = 1e-6) -> LmiProblem:
    A = check_matrix(A, "A", square=True)
    n = A.shape[0]
    layout = VariableLayout([("P", "symmetric_free", n), ("Q", "symmetric_free", n), ("alpha", "full_free", 1)])
    P, Q, alpha = layout.expr("P"), layout.expr("Q"), layout.expr("alpha")
    I = np.eye(n)
    problem = LmiProblem(layout)
    problem.add(P - epsilon * I, "psd", name="P_pos")
    problem.add(I - P, "psd", name="P_le_I")
    problem.add(-(A.T @ P + P @ A) - Q, "psd", name="decay")
    # alpha * I as an n x n expression
    alpha_I = AffineExpr(np.zeros((n, n)), alpha.coeffs[:, 0, 0][:, None, None] * I[None])
    problem.add(Q - alpha_I, "psd", name="Q_ge_alpha")
    for i in range(n):
        for j in range(i + 1, n):
            problem.add(-Q.entry(i, j), "psd", name=f"Q_off_{i}{j}")
    objective = np.zeros(layout.total_scalars)
    objective[layout.offset("alpha")] = 1.0
    problem.objective = objective
    return problem


def synthesize_lyapunov(A, config: SolverConfig | None = None, epsilon: float = 1e-6) -> LyapunovCertificate:
    """Maximize ``alpha`` over ``eps I <= P <= I``, ``A^T P + P A <= -Q``, ``Q >= alpha I``, ``Q_ij <= 0``."""
    A = check_matrix(A, "A", square=True)
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise ValueError("A is not Hurwitz")
    problem = lyapunov_problem(A, epsilon)
    verdict = maximize_linear(problem, config or SolverConfig())
    if verdict.status == INCONCLUSIVE or not verdict.feasible:
        raise RuntimeError(f"Lyapunov synthesis failed: {verdict.status}")
    layout = problem.layout
    P = layout.value("P", verdict.point)
    Q = layout.value("Q", verdict.point)
    alpha = float(layout.value("alpha", verdict.point)[0, 0])
    return LyapunovCertificate(P, Q, alpha, A, verdict)
