"""Small dense LMI solver.

A primal log-det barrier method with damped Newton steps. Two entry points:

* :func:`solve_feasibility` maximizes a common margin ``t`` such that every
  psd block is ``>= t I``, every nd block is ``<= -t I`` and every positive
  scalar is ``>= t``, inside the box ``|x_i| <= variable_bound``. The sign of
  the optimal ``t`` gives the verdict.
* :func:`maximize_linear` finds a strictly feasible point with the above
  (phase I) and then follows the central path of ``max c.x`` (phase II).

Problems here have at most a few hundred scalars and blocks of size <= 12,
so the Hessian of the barrier is formed densely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lmi import LmiProblem, evaluate_block, validate
from .matrix_core import is_definite

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20000
    margin_tolerance: float = 1e-7
    variable_bound: float = 1e6
    seed: int = 42
    # barrier schedule
    mu: float = 10.0
    newton_tol: float = 1e-9
    # at large s roundoff keeps the Newton decrement from reaching newton_tol
    max_center_steps: int = 60

    def __post_init__(self):
        if self.margin_tolerance <= 0:
            raise ValueError("margin_tolerance must be > 0")
        if self.variable_bound <= 0:
            raise ValueError("variable_bound must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.mu <= 1:
            raise ValueError("mu must be > 1")


@dataclass
class SdpVerdict:
    status: str
    point: np.ndarray
    margin: float
    iterations: int
    objective: float | None = None
    upper_bound: float | None = None
    history: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


class _Barrier:
    """``max c.z`` subject to ``C_j + sum z_i D_ji > 0`` and ``A z + b > 0``."""

    def __init__(self, mats, A, b, c):
        self.mats = mats  # list of (C (d,d), D (p,d,d))
        self.A = A
        self.b = b
        self.c = c
        self.nu = sum(C.shape[0] for C, _ in mats) + A.shape[0]

    def _chols(self, z):
        out = []
        for C, D in self.mats:
            Z = C + np.tensordot(z, D, axes=1)
            try:
                out.append(np.linalg.cholesky(0.5 * (Z + Z.T)))
            except np.linalg.LinAlgError:
                return None
        return out

    def phi(self, z):
        """Barrier value, ``inf`` outside the domain."""
        slack = self.A @ z + self.b
        if np.any(slack <= 0):
            return np.inf
        chols = self._chols(z)
        if chols is None:
            return np.inf
        return -np.sum(np.log(slack)) - sum(2.0 * np.sum(np.log(np.diag(L))) for L in chols)

    def derivatives(self, z):
        p = z.size
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        for (C, D), L in zip(self.mats, self._chols(z)):
            d = C.shape[0]
            Linv = np.linalg.inv(L)
            K = Linv @ D @ Linv.T  # (p, d, d)
            Kf = K.reshape(p, d * d)
            grad -= np.trace(K, axis1=1, axis2=2)
            hess += Kf @ Kf.T
        slack = self.A @ z + self.b
        W = self.A / slack[:, None]
        grad -= W.sum(axis=0)
        hess += W.T @ W
        return grad, hess

    def center(self, z, s, budget, tol):
        """Damped Newton on ``-s c.z + phi(z)``; returns (z, steps used)."""
        f = -s * (self.c @ z) + self.phi(z)
        steps = 0
        while steps < budget:
            g, H = self.derivatives(z)
            g = g - s * self.c
            try:
                dz = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, g, rcond=None)[0]
            steps += 1
            dec = -(g @ dz)
            if not np.isfinite(dec) or dec / 2.0 <= tol:
                break
            a = 1.0
            while a > 1e-12:
                zn = z + a * dz
                fn = -s * (self.c @ zn) + self.phi(zn)
                if fn <= f - 0.25 * a * dec:
                    break
                a *= 0.5
            else:
                break
            z, f = zn, fn
        return z, steps

    def solve(self, z, config, gap_tol, max_steps, stop=None):
        """Follow the central path from the strictly feasible ``z``.

        Ends once the duality-gap bound ``nu / s`` is below
        ``gap_tol * max(1, |c.z|)``; ``stop(z, s)`` may end the path
        earlier. Returns ``(z, s, steps, history)``.
        """
        s = 1.0
        steps = 0
        history = []
        while steps < max_steps:
            budget = min(config.max_center_steps, max_steps - steps)
            z, used = self.center(z, s, budget, config.newton_tol)
            steps += used
            obj = float(self.c @ z)
            history.append(obj)
            if self.nu / s < gap_tol * max(1.0, abs(obj)) or (stop is not None and stop(z, s)):
                break
            s *= config.mu
        return z, s, steps, history


def _oriented(problem: LmiProblem):
    """Yield ``(C, D)`` with the block required positive definite in that orientation."""
    m = problem.m
    for block in problem.constraints:
        C = np.asarray(block.constant, dtype=float)
        D = block.coefficient_tensor(m)
        if block.sign == "nd":
            C, D = -C, -D
        yield 0.5 * (C + C.T), 0.5 * (D + np.transpose(D, (0, 2, 1)))


def point_margin(problem: LmiProblem, point) -> float:
    """Worst signed definiteness margin at ``point`` (positive-scalar floors included)."""
    x = np.asarray(point, dtype=float)
    vals = []
    for block in problem.constraints:
        G = evaluate_block(block, x)
        ev = np.linalg.eigvalsh(G)
        vals.append(ev[0] if block.sign == "psd" else -ev[-1])
    pos = problem.layout.positive_indices()
    if pos.size:
        vals.append(np.min(x[pos]))
    return float(min(vals)) if vals else np.inf


def recheck(problem: LmiProblem, point) -> bool:
    """Independent (Jacobi) re-check that ``point`` satisfies every block at margin 0."""
    x = np.asarray(point, dtype=float)
    for block in problem.constraints:
        sign = "positive" if block.sign == "psd" else "negative"
        if not is_definite(evaluate_block(block, x), sign, 0.0):
            return False
    pos = problem.layout.positive_indices()
    return bool(np.all(x[pos] >= 0.0)) if pos.size else True


def _check(problem: LmiProblem):
    diags = validate(problem)
    if diags:
        raise ValueError("invalid LMI problem: " + "; ".join(diags))


def _phase_one(problem: LmiProblem, config: SolverConfig, target: float | None = None):
    """Maximize the common margin ``t``; returns ``(x, t, upper_bound, steps)``."""
    m = problem.m
    bound = config.variable_bound
    rng = np.random.default_rng(config.seed)
    x0 = rng.uniform(-1e-3, 1e-3, size=m)
    pos = problem.layout.positive_indices()
    if pos.size:
        x0[pos] = np.abs(x0[pos]) + 1e-3

    mats = []
    t0 = 0.0
    for C, D in _oriented(problem):
        d = C.shape[0]
        D_aug = np.concatenate([D, -np.eye(d)[None]], axis=0)
        mats.append((C, D_aug))
        t0 = min(t0, np.linalg.eigvalsh(C + np.tensordot(x0, D, axes=1))[0])
    # linear rows: x_i - t > 0 (positive scalars), bound -+ x_i > 0, bound - t > 0
    rows, rhs = [], []
    for i in pos:
        r = np.zeros(m + 1)
        r[i], r[m] = 1.0, -1.0
        rows.append(r)
        rhs.append(0.0)
        t0 = min(t0, x0[i])
    eye = np.eye(m + 1)
    for i in range(m):
        rows.append(-eye[i])
        rhs.append(bound)
        rows.append(eye[i])
        rhs.append(bound)
    rows.append(-eye[m])
    rhs.append(bound)
    A = np.array(rows).reshape(-1, m + 1)
    b = np.array(rhs)
    c = eye[m]
    t_start = t0 - 1.0
    z0 = np.append(x0, t_start)
    barrier = _Barrier(mats, A, b, c)
    tol = config.margin_tolerance

    def stop(z, s):
        ub = z[m] + barrier.nu / s
        if ub < -tol:
            return True
        return target is not None and z[m] >= target

    gap_tol = min(1e-3 * tol, 1e-10)
    z, s, steps, _ = barrier.solve(z0, config, gap_tol, config.max_iterations, stop)
    return z[:m], float(z[m]), float(z[m] + barrier.nu / s), steps


def solve_feasibility(problem: LmiProblem, config: SolverConfig | None = None) -> SdpVerdict:
    """Decide feasibility of ``problem`` with a quantified margin."""
    config = config or SolverConfig()
    _check(problem)
    if problem.objective is not None:
        raise ValueError("solve_feasibility expects a problem without objective")
    x, t, ub, steps = _phase_one(problem, config)
    margin = point_margin(problem, x)
    tol = config.margin_tolerance
    if margin > tol and recheck(problem, x):
        status = FEASIBLE
    elif ub < -tol or (steps < config.max_iterations and t < -tol):
        status = INFEASIBLE
    else:
        status = INCONCLUSIVE
    log.debug("feasibility: status=%s margin=%.3e ub=%.3e steps=%d", status, margin, ub, steps)
    return SdpVerdict(status, x, margin, steps, upper_bound=ub)


def maximize_linear(problem: LmiProblem, config: SolverConfig | None = None) -> SdpVerdict:
    """Maximize ``problem.objective . x`` over the (non-strict) LMI feasible set."""
    config = config or SolverConfig()
    _check(problem)
    if problem.objective is None:
        raise ValueError("maximize_linear needs problem.objective")
    c = np.asarray(problem.objective, dtype=float)
    m = problem.m
    tol = config.margin_tolerance

    x, t, ub, steps = _phase_one(problem, config, target=tol)
    if t <= 0:
        status = INFEASIBLE if ub < -tol or steps < config.max_iterations else INCONCLUSIVE
        return SdpVerdict(status, x, point_margin(problem, x), steps, upper_bound=ub)

    mats = list(_oriented(problem))
    pos = problem.layout.positive_indices()
    eye = np.eye(m)
    rows = [eye[i] for i in pos]
    rhs = [0.0] * len(rows)
    for i in range(m):
        rows += [-eye[i], eye[i]]
        rhs += [config.variable_bound, config.variable_bound]
    A = np.array(rows).reshape(-1, m)
    barrier = _Barrier(mats, A, np.array(rhs), c)
    gap_tol = 1e-8
    x, s, used, history = barrier.solve(x, config, gap_tol, config.max_iterations - steps)
    steps += used
    obj = float(c @ x)
    margin = point_margin(problem, x)
    converged = barrier.nu / s < gap_tol * max(1.0, abs(obj))
    status = FEASIBLE if margin >= 0 and converged and recheck(problem, x) else INCONCLUSIVE
    return SdpVerdict(status, x, margin, steps, objective=obj, upper_bound=obj + barrier.nu / s, history=history)
