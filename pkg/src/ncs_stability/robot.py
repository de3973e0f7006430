"""Two-link planar arm under feedback-linearizing control over four delay channels.

State ``x = [q1, dq1, q2, dq2]``. The controller polls both joint sensors and
drives both actuators; the four lumped delay channels are

====== ======== ==========
chan   sensor   actuator
====== ======== ==========
1      1        1
2      1        2
3      2        1
4      2        2
====== ======== ==========

so ``tau1`` reads joint-1 data through channel 1 and joint-2 data through
channel 3, and ``tau2`` reads joint-1 data through channel 2 and joint-2
data through channel 4.

The equations of motion are taken as ``M(q2) ddq - N(x) = tau``. All
functions broadcast over leading batch dimensions of the state arrays.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .analyzer import SystemBounds, companion_error_dynamics

CHANNELS = {1: (1, 1), 2: (1, 2), 3: (2, 1), 4: (2, 2)}
N2_FORMS = ("linear", "coriolis")


@dataclass(frozen=True)
class RobotParams:
    m1: float = 1.5
    m2: float = 0.8
    a1: float = 0.5
    a2: float = 0.4
    g: float = 9.8
    alpha1: float = 2.55
    alpha2: float = 2.55
    beta1: float = 3.16
    beta2: float = 3.16
    qd1: float = 0.0
    qd2: float = 0.0
    n2_form: str = "linear"

    def __post_init__(self):
        for name in ("m1", "m2", "a1", "a2", "alpha1", "alpha2", "beta1", "beta2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n2_form not in N2_FORMS:
            raise ValueError(f"n2_form must be one of {N2_FORMS}")

    @property
    def equilibrium(self) -> np.ndarray:
        return np.array([self.qd1, 0.0, self.qd2, 0.0])

    def error_dynamics(self) -> np.ndarray:
        """Closed-loop matrix of the undelayed loop in coordinates ``x - equilibrium``."""
        return companion_error_dynamics([self.alpha1, self.alpha2], [self.beta1, self.beta2])

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.m1, self.m2, self.a1, self.a2, self.g, self.alpha1, self.alpha2, self.beta1, self.beta2, self.qd1, self.qd2,
             1.0 if self.n2_form == "coriolis" else 0.0]
        )


@dataclass(frozen=True)
class StateDomain:
    """Axis-aligned box of states, ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.any(hi < lo):
            raise ValueError("domain has an empty interval")
        if np.any(hi - lo <= 0):
            raise ValueError("domain has zero volume")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, half_widths) -> "StateDomain":
        c = np.asarray(center, dtype=float)
        h = np.broadcast_to(np.asarray(half_widths, dtype=float), c.shape)
        return cls(c - h, c + h)

    @classmethod
    def default(cls, params: RobotParams, position: float = 0.5, velocity: float = 0.5) -> "StateDomain":
        return cls.around(params.equilibrium, [position, velocity, position, velocity])

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def sample(self, rng, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        return rng.uniform(self.lower, self.upper, size=shape + self.lower.shape)


def inertia_matrix(params: RobotParams, q2) -> np.ndarray:
    """``[[M11, M12], [M12, M22]]`` at joint angle ``q2`` (broadcasts)."""
    p = params
    c2 = np.cos(q2)
    m11 = (p.m1 + p.m2) * p.a1**2 + p.m2 * p.a2**2 + 2.0 * p.m2 * p.a1 * p.a2 * c2
    m12 = p.m2 * p.a2 * (p.a2 + p.a1 * c2)
    m22 = np.full_like(m11, p.m2 * p.a2**2)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def bias_terms(params: RobotParams, x) -> np.ndarray:
    """``[N1, N2]`` at state ``x`` (last axis holds ``q1, dq1, q2, dq2``)."""
    p = params
    x = np.asarray(x, dtype=float)
    q1, dq1, q2, dq2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    s2 = np.sin(q2)
    grav12 = p.m2 * p.g * p.a2 * np.cos(q1 + q2)
    n1 = -p.m2 * p.a1 * p.a2 * (2.0 * dq1 * dq2 + dq2**2) * s2 + (p.m1 + p.m2) * p.g * p.a1 * np.cos(q1) + grav12
    if p.n2_form == "linear":
        n2 = p.m2 * p.a1 * p.a2 * dq1 * s2 + grav12
    else:
        n2 = p.m2 * p.a1 * p.a2 * dq1**2 * s2 + grav12
    return np.stack([n1, n2], -1)


def _split(delayed):
    d = np.asarray(delayed, dtype=float)
    if d.shape[0] != 4:
        raise ValueError("need one delayed state per channel (4)")
    return d


def control_torques(params: RobotParams, delayed) -> np.ndarray:
    """Feedback-linearizing torques built from the four delayed states.

    ``delayed[k - 1]`` is the state seen through channel ``k``.
    """
    p = params
    d = _split(delayed)
    out = []
    for joint1_ch, joint2_ch in ((1, 3), (2, 4)):
        s1 = d[joint1_ch - 1]
        s2 = d[joint2_ch - 1]
        # the state the controller believes in for this actuator
        seen = np.stack([s1[..., 0], s1[..., 1], s2[..., 2], s2[..., 3]], -1)
        M = inertia_matrix(p, seen[..., 2])
        v = -np.stack(
            [p.alpha1 * seen[..., 1] + p.beta1 * (seen[..., 0] - p.qd1), p.alpha2 * seen[..., 3] + p.beta2 * (seen[..., 2] - p.qd2)],
            -1,
        )
        row = 0 if joint1_ch == 1 else 1
        out.append(np.einsum("...j,...j->...", M[..., row, :], v) - bias_terms(p, seen)[..., row])
    return np.stack(out, -1)


def closed_loop_f(params: RobotParams, t, x, x_d1, x_d2, x_d3, x_d4) -> np.ndarray:
    """State derivative ``[dq1, ddq1, dq2, ddq2]`` with delayed feedback."""
    x = np.asarray(x, dtype=float)
    tau = control_torques(params, np.stack(np.broadcast_arrays(x_d1, x_d2, x_d3, x_d4)))
    M = inertia_matrix(params, x[..., 2])
    rhs = tau + bias_terms(params, x)
    ddq = np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.stack([x[..., 1], ddq[..., 0], x[..., 3], ddq[..., 1]], -1)


def undelayed_f(params: RobotParams, x) -> np.ndarray:
    return closed_loop_f(params, 0.0, x, x, x, x, x)


def gamma(params: RobotParams, k: int, x, delayed) -> np.ndarray:
    """Vector field with channels ``k..4`` delayed and ``1..k-1`` current (``k = 5``: none delayed)."""
    if not 1 <= k <= 5:
        raise ValueError("k must be in 1..5")
    x = np.asarray(x, dtype=float)
    d = _split(delayed)
    args = [x if ch < k else d[ch - 1] for ch in range(1, 5)]
    return closed_loop_f(params, 0.0, x, *args)


def zero_pattern(k: int) -> np.ndarray:
    """Structural support of ``M_k``: rows 2 and 4, joint-1 columns for k = 1, 2, joint-2 columns for k = 3, 4."""
    mask = np.zeros((4, 4), dtype=bool)
    cols = [0, 1] if k in (1, 2) else [2, 3]
    for r in (1, 3):
        mask[r, cols] = True
    return mask


def _grid(domain: StateDomain) -> np.ndarray:
    axes = [np.array([lo, 0.5 * (lo + hi), hi]) for lo, hi in zip(domain.lower, domain.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(axes))


def channel_ratio_suprema(f, q: int, domain: StateDomain, sample_count: int, seed: int = 0) -> np.ndarray:
    """Per-entry suprema of ``|Gamma_k - Gamma_{k+1}|_i / |x - x_dk|_j`` over single-coordinate offsets.

    ``f(x, delayed)`` takes a batch of states ``(N, n)`` and delayed states
    ``(q, N, n)``. Samples differ from ``x`` only in coordinate ``j`` of the
    channel-``k`` delayed state; other channels are drawn freely from the
    domain. The random part is a prefix-stable stream (sample ``i`` does not
    depend on ``sample_count``), followed by a fixed 3-point grid.

    Returns an array ``(q, n, n)``.
    """
    if sample_count < 0:
        raise ValueError("sample_count must be non-negative")
    n = domain.lower.size
    out = np.zeros((q, n, n))
    grid = _grid(domain)
    for k in range(1, q + 1):
        for j in range(n):
            rng = np.random.default_rng([seed, k, j])
            # draw (x, other channels, new coordinate value) per sample, in one block per sample
            raw = rng.uniform(size=(sample_count, (q + 1) * n + 1))
            span = domain.upper - domain.lower
            x = domain.lower + raw[:, :n] * span
            others = domain.lower + raw[:, n : (q + 1) * n].reshape(sample_count, q, n) * span
            v = domain.lower[j] + raw[:, -1] * span[j]
            # grid part: x on the grid, other channels at x, coordinate at both ends
            gx = np.repeat(grid, 2, axis=0)
            gv = np.tile([domain.lower[j], domain.upper[j]], grid.shape[0])
            x = np.concatenate([x, gx])
            others = np.concatenate([others, np.repeat(gx[:, None, :], q, axis=1)])
            v = np.concatenate([v, gv])
            xdk = x.copy()
            xdk[:, j] = v
            dx = np.abs(x[:, j] - v)
            keep = dx >= 1e-9
            if not np.any(keep):
                continue
            x, others, xdk, dx = x[keep], others[keep], xdk[keep], dx[keep]
            # Gamma_k: channels < k current, channel k at xdk, channels > k from `others`
            dk = [x if ch < k else (xdk if ch == k else others[:, ch - 1]) for ch in range(1, q + 1)]
            dk1 = [x if ch <= k else others[:, ch - 1] for ch in range(1, q + 1)]
            diff = np.abs(f(x, np.stack(dk)) - f(x, np.stack(dk1)))
            out[k - 1, :, j] = np.max(diff / dx[:, None], axis=0)
    return out


def estimate_Mk(
    params: RobotParams, domain: StateDomain, sample_count: int = 20000, seed: int = 0, margin: float = 1.05
) -> list[np.ndarray]:
    """Sampled estimate of the four channel bound matrices ``M_k`` over ``domain``."""
    if margin < 1:
        raise ValueError("margin must be >= 1")

    def f(x, delayed):
        return closed_loop_f(params, 0.0, x, *delayed)

    sup = channel_ratio_suprema(f, 4, domain, sample_count, seed)
    return [np.where(zero_pattern(k), margin * sup[k - 1], 0.0) for k in range(1, 5)]


@dataclass
class Violation:
    relation: str
    row: int
    lhs: float
    rhs: float
    state: np.ndarray
    delayed: np.ndarray | None = None
    channel: int | None = None

    def as_dict(self) -> dict:
        d = {"relation": self.relation, "row": self.row + 1, "lhs": self.lhs, "rhs": self.rhs, "state": self.state.tolist()}
        if self.channel is not None:
            d["channel"] = self.channel
            d["delayed_state"] = self.delayed.tolist()
        return d


@dataclass
class AssumptionReport:
    checked: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    worst_excess: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, relation: str) -> int:
        return sum(1 for v in self.violations if v.relation == relation)

    def summary(self, max_witnesses: int = 3) -> dict:
        out = {}
        for rel, n in self.checked.items():
            wit = [v.as_dict() for v in self.violations if v.relation == rel][:max_witnesses]
            out[rel] = {"checked": n, "violations": self.count(rel), "worst_excess": self.worst_excess.get(rel, 0.0), "witnesses": wit}
        return out


def verify_assumptions(
    bounds: SystemBounds,
    params: RobotParams,
    domain: StateDomain,
    sample_count: int = 5000,
    seed: int = 0,
    P=None,
    tol: float = 1e-9,
) -> AssumptionReport:
    """Sample the domain and check the four bounding relations element-wise.

    Relations, in error coordinates ``e = x - equilibrium``:

    * ``decay``: ``2 e^T P f(x..x) <= -|e|^T S |e|``
    * ``gradient``: ``|2 P e| <= 2 W |e|``
    * ``growth``: ``|f(x..x)| <= F |e|``
    * ``channel``: ``|Gamma_k - Gamma_{k+1}| <= M_k |x - x_dk|`` for each k

    ``P`` defaults to ``W`` (valid when the Lyapunov matrix is entrywise
    non-negative, as for the arm). An entry counts as a violation when it
    exceeds its bound by more than ``tol * (1 + |rhs|)``.
    """
    if bounds.n != 4 or bounds.q != 4:
        raise ValueError("robot bounds need n = 4 and q = 4")
    P = bounds.W if P is None else np.asarray(P, dtype=float)
    rng = np.random.default_rng(seed)
    x = domain.sample(rng, sample_count)
    delayed = domain.sample(rng, (4, sample_count))
    e = x - params.equilibrium
    eb = np.abs(e)
    report = AssumptionReport()

    def record(relation, lhs, rhs, channel=None):
        lhs = lhs.reshape(sample_count, -1)
        rhs = rhs.reshape(sample_count, -1)
        excess = lhs - rhs
        bad = excess > tol * (1.0 + np.abs(rhs))
        report.checked[relation] = report.checked.get(relation, 0) + lhs.size
        report.worst_excess[relation] = max(report.worst_excess.get(relation, -np.inf), float(np.max(excess)))
        for s, r in zip(*np.nonzero(bad)):
            report.violations.append(
                Violation(relation, int(r), float(lhs[s, r]), float(rhs[s, r]), x[s].copy(),
                          None if channel is None else delayed[channel - 1, s].copy(), channel)
            )

    f0 = undelayed_f(params, x)
    record("decay", 2.0 * np.einsum("si,ij,sj->s", e, P, f0), -np.einsum("si,ij,sj->s", eb, bounds.S, eb))
    record("gradient", np.abs(2.0 * e @ P), 2.0 * eb @ bounds.W.T)
    record("growth", np.abs(f0), eb @ bounds.F.T)
    for k in range(1, 5):
        g_k = gamma(params, k, x, delayed)
        g_next = gamma(params, k + 1, x, delayed)
        record("channel", np.abs(g_k - g_next), np.abs(x - delayed[k - 1]) @ bounds.M[k - 1].T, channel=k)
    return report


@functools.lru_cache(maxsize=8)
def make_rhs(params: RobotParams, jit: bool = True):
    """Scalar closed-loop right-hand side ``rhs(t, x, xd)`` for :func:`ncs_stability.sim.integrate`.

    ``xd`` is the ``(4, 4)`` array of channel-delayed states. With ``jit``
    the function is compiled by numba (parameters are frozen in).
    """
    m1, m2, a1, a2, g = params.m1, params.m2, params.a1, params.a2, params.g
    al1, al2, be1, be2 = params.alpha1, params.alpha2, params.beta1, params.beta2
    qd1, qd2 = params.qd1, params.qd2
    coriolis = params.n2_form == "coriolis"
    c11 = (m1 + m2) * a1 * a1 + m2 * a2 * a2
    c12 = m2 * a1 * a2

    def rhs(t, x, xd):
        # controller's view for actuator 1: joint 1 via channel 1, joint 2 via channel 3
        out = np.empty(4)
        taus = np.empty(2)
        for act in range(2):
            s1 = xd[act]
            s2 = xd[act + 2]
            q1, dq1, q2, dq2 = s1[0], s1[1], s2[2], s2[3]
            cq2 = np.cos(q2)
            v1 = -(al1 * dq1 + be1 * (q1 - qd1))
            v2 = -(al2 * dq2 + be2 * (q2 - qd2))
            g12 = m2 * g * a2 * np.cos(q1 + q2)
            if act == 0:
                mrow0 = c11 + 2.0 * c12 * cq2
                mrow1 = m2 * a2 * (a2 + a1 * cq2)
                nb = -c12 * (2.0 * dq1 * dq2 + dq2 * dq2) * np.sin(q2) + (m1 + m2) * g * a1 * np.cos(q1) + g12
            else:
                mrow0 = m2 * a2 * (a2 + a1 * cq2)
                mrow1 = m2 * a2 * a2
                vel = dq1 * dq1 if coriolis else dq1
                nb = c12 * vel * np.sin(q2) + g12
            taus[act] = mrow0 * v1 + mrow1 * v2 - nb
        q1, dq1, q2, dq2 = x[0], x[1], x[2], x[3]
        cq2 = np.cos(q2)
        M11 = c11 + 2.0 * c12 * cq2
        M12 = m2 * a2 * (a2 + a1 * cq2)
        M22 = m2 * a2 * a2
        g12 = m2 * g * a2 * np.cos(q1 + q2)
        N1 = -c12 * (2.0 * dq1 * dq2 + dq2 * dq2) * np.sin(q2) + (m1 + m2) * g * a1 * np.cos(q1) + g12
        vel = dq1 * dq1 if coriolis else dq1
        N2 = c12 * vel * np.sin(q2) + g12
        r1 = taus[0] + N1
        r2 = taus[1] + N2
        det = M11 * M22 - M12 * M12
        out[0] = dq1
        out[1] = (M22 * r1 - M12 * r2) / det
        out[2] = dq2
        out[3] = (M11 * r2 - M12 * r1) / det
        return out

    if jit:
        import numba

        return numba.njit(rhs)
    return rhs
