"""Network-induced delay traces and fixed-step simulation of the delayed loop.

Delay model
-----------
Every control cycle (length at most ``sampling_bound_h``) each sensor is
sampled and its packet travels to the controller; the controller computes
once the cycle's packets are in and sends one command per actuator. Each
link delays a packet by up to ``transmission_delay_max`` and may drop it
(at most ``max_successive_losses`` drops in a row). Receivers keep the
newest data by timestamp, so late packets overtaken by newer ones are
discarded.

For a channel ``(sensor j, actuator l)`` the delay at time ``t`` is the age of
the sensor-``j`` sample inside the command currently held by actuator
``l``. It grows with slope one between arrivals and drops when a fresher
command lands, and it never exceeds ``2 eta + (2 n + 1) h``.
"""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e6


@dataclass(frozen=True)
class NetworkScenario:
    control_cycle_T: float
    transmission_delay_max: float = 0.0
    sampling_bound_h: float | None = None
    max_successive_losses: int = 0
    loss_probability: float = 0.0
    seed: int = 0
    horizon: float = 1.0
    cycle_jitter: float = 0.2
    delay_cap: float | None = None

    def __post_init__(self):
        if self.control_cycle_T <= 0:
            raise ValueError("control_cycle_T must be positive")
        if self.transmission_delay_max < 0:
            raise ValueError("transmission_delay_max must be non-negative")
        if self.h <= 0 or self.h > self.control_cycle_T:
            raise ValueError("sampling_bound_h must lie in (0, control_cycle_T]")
        if self.max_successive_losses < 0:
            raise ValueError("max_successive_losses must be non-negative")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must lie in [0, 1]")
        if not 0.0 <= self.cycle_jitter < 1.0:
            raise ValueError("cycle_jitter must lie in [0, 1)")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.delay_cap is not None and self.delay_bound() > self.delay_cap:
            raise ValueError(
                f"delay bound 2*eta + (2n+1)*h = {self.delay_bound():.6g} s exceeds the declared cap {self.delay_cap:.6g} s"
            )

    @property
    def h(self) -> float:
        return self.control_cycle_T if self.sampling_bound_h is None else self.sampling_bound_h

    def delay_bound(self) -> float:
        """Worst-case lumped delay of one sensor-to-actuator channel."""
        return 2.0 * self.transmission_delay_max + (2 * self.max_successive_losses + 1) * self.h


@dataclass
class DelayTraces:
    """Per-channel sample timestamps held over time.

    Channel ``i`` holds ``stamps[i][k]`` from ``times[i][k]`` until the next
    breakpoint, so ``d_i(t) = t - stamp``. A channel with no breakpoints is
    undelayed (``d_i = 0``).
    """

    times: list
    stamps: list
    horizon: float

    @property
    def q(self) -> int:
        return len(self.times)

    @classmethod
    def zero(cls, q: int, horizon: float) -> "DelayTraces":
        return cls([np.zeros(0)] * q, [np.zeros(0)] * q, horizon)

    def __call__(self, t) -> np.ndarray:
        """Delays ``(q, len(t))`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((self.q, t.size))
        for i, (bt, st) in enumerate(zip(self.times, self.stamps)):
            if bt.size == 0:
                continue
            idx = np.searchsorted(bt, t, side="right") - 1
            out[i] = t - st[np.clip(idx, 0, None)]
        return out

    def peak(self) -> np.ndarray:
        """Exact supremum of each channel's delay over ``[0, horizon]``."""
        out = np.zeros(self.q)
        for i, (bt, st) in enumerate(zip(self.times, self.stamps)):
            if bt.size == 0:
                continue
            ends = np.append(bt[1:], self.horizon)
            out[i] = np.max(ends - st)
        return out

    def min_gap(self) -> float:
        gaps = [np.min(np.diff(bt)) for bt in self.times if bt.size > 1]
        return float(min(gaps)) if gaps else np.inf

    def packed(self):
        """Padded arrays for the integration kernel."""
        counts = np.array([bt.size for bt in self.times], dtype=np.int64)
        width = max(1, int(counts.max(initial=0)))
        T = np.full((self.q, width + 1), np.inf)
        S = np.zeros((self.q, width + 1))
        for i, (bt, st) in enumerate(zip(self.times, self.stamps)):
            T[i, : bt.size] = bt
            S[i, : st.size] = st
        return T, S, counts


def _loss_mask(rng, size: int, p: float, cap: int) -> np.ndarray:
    """Bernoulli(p) drops with no more than ``cap`` in a row."""
    draws = rng.random(size) < p
    lost = np.zeros(size, dtype=bool)
    run = 0
    for k in range(size):
        if draws[k] and run < cap:
            lost[k] = True
            run += 1
        else:
            run = 0
    return lost


def generate_delays(scenario: NetworkScenario, q: int, channel_composition: dict) -> DelayTraces:
    """Simulate polling, transport and loss; return one delay trace per channel.

    ``channel_composition`` maps channel ``1..q`` to ``(sensor, actuator)``.
    """
    if sorted(channel_composition) != list(range(1, q + 1)):
        raise ValueError(f"channel_composition must cover channels 1..{q}")
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    eta, h = sc.transmission_delay_max, sc.h
    sensors = sorted({s for s, _ in channel_composition.values()})
    actuators = sorted({a for _, a in channel_composition.values()})

    n_cycles = int(np.ceil(sc.horizon / ((1.0 - sc.cycle_jitter) * h))) + 2
    lengths = h * (1.0 - sc.cycle_jitter * rng.random(n_cycles))
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    starts = starts[starts <= sc.horizon]
    K = starts.size
    cap = sc.max_successive_losses

    # sensor -> controller
    s_arrive, s_lost = {}, {}
    for j in sensors:
        s_arrive[j] = starts + eta * rng.random(K)
        s_lost[j] = _loss_mask(rng, K, sc.loss_probability, cap)
    compute = starts.copy()
    for j in sensors:
        compute = np.maximum(compute, np.where(s_lost[j], -np.inf, s_arrive[j]))
    # newest sample of sensor j at the controller when cycle k computes
    used = {}
    for j in sensors:
        ok = ~s_lost[j]
        arr_t, arr_s = s_arrive[j][ok], starts[ok]
        order = np.argsort(arr_t, kind="stable")
        arr_t, arr_s = arr_t[order], np.maximum.accumulate(arr_s[order])
        idx = np.searchsorted(arr_t, compute, side="right") - 1
        # nothing received yet: the controller still holds the initial sample taken at t = 0
        used[j] = np.where(idx >= 0, arr_s[np.clip(idx, 0, None)], 0.0)

    # controller -> actuator
    times, stamps = [], []
    a_arrive, a_lost = {}, {}
    for l in actuators:
        a_arrive[l] = compute + eta * rng.random(K)
        a_lost[l] = _loss_mask(rng, K, sc.loss_probability, cap)
    for ch in range(1, q + 1):
        j, l = channel_composition[ch]
        ok = ~a_lost[l]
        at, cyc = a_arrive[l][ok], np.nonzero(ok)[0]
        order = np.argsort(at, kind="stable")
        at, cyc = at[order], cyc[order]
        # stale commands (older cycle than the one held) are discarded
        newest = np.maximum.accumulate(cyc)
        fresh = np.concatenate([[True], newest[1:] > newest[:-1]])
        at, cyc = at[fresh], newest[fresh]
        st = used[j][cyc]
        keep = at <= sc.horizon
        bt = np.concatenate([[0.0], at[keep]])
        bs = np.concatenate([[0.0], st[keep]])
        # merge breakpoints that do not change the stamp
        change = np.concatenate([[True], np.diff(bs) != 0])
        times.append(bt[change])
        stamps.append(bs[change])
    return DelayTraces(times, stamps, sc.horizon)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    delays: np.ndarray
    err_norm: np.ndarray
    dt: float
    horizon: float
    divergent: bool = False

    def to_csv(self, path, state_names=("q1", "dq1", "q2", "dq2"), stride: int = 1) -> None:
        q = self.delays.shape[1]
        header = ["t", *state_names, *[f"d{i}" for i in range(1, q + 1)], "err_norm"]
        rows = np.column_stack([self.t, self.x, self.delays, self.err_norm])[::stride]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.12g}" for v in r])


def _rk4_loop(f, x0, bt, bs, counts, dt, nsteps, cap):
    n = x0.shape[0]
    q = counts.shape[0]
    hist = np.zeros((nsteps + 1, n))
    dels = np.zeros((nsteps + 1, q))
    hist[0] = x0
    ptr = np.zeros(q, dtype=np.int64)
    xd = np.zeros((q, n))
    ks = np.zeros((4, n))
    y = np.zeros(n)
    offs = (0.0, 0.5, 0.5, 1.0)
    last = nsteps
    diverged = False
    for step in range(nsteps):
        t = step * dt
        xn = hist[step]
        for st in range(4):
            ts = t + offs[st] * dt
            for i in range(n):
                y[i] = xn[i] if st == 0 else xn[i] + offs[st] * dt * ks[st - 1, i]
            for ch in range(q):
                if counts[ch] == 0:
                    for i in range(n):
                        xd[ch, i] = y[i]
                    continue
                # stages inside the step see the left limit, so a breakpoint on the grid switches cleanly
                while ptr[ch] + 1 < counts[ch] and (bt[ch, ptr[ch] + 1] < ts or (st == 0 and bt[ch, ptr[ch] + 1] <= ts)):
                    ptr[ch] += 1
                tau = bs[ch, ptr[ch]]
                if tau <= 0.0:
                    for i in range(n):
                        xd[ch, i] = hist[0, i]
                elif tau >= t:
                    # sample taken inside the current step
                    w = (tau - t) / (ts - t) if ts > t else 0.0
                    for i in range(n):
                        xd[ch, i] = (1.0 - w) * xn[i] + w * y[i]
                else:
                    pos = tau / dt
                    i = int(pos)
                    if i >= step:
                        i = step - 1
                    w = pos - i
                    for k in range(n):
                        xd[ch, k] = (1.0 - w) * hist[i, k] + w * hist[i + 1, k]
                if st == 0:
                    dels[step, ch] = t - tau
            ks[st] = f(ts, y, xd)
        nrm = 0.0
        for i in range(n):
            v = xn[i] + dt / 6.0 * (ks[0, i] + 2.0 * ks[1, i] + 2.0 * ks[2, i] + ks[3, i])
            hist[step + 1, i] = v
            nrm += v * v
        if not nrm < cap * cap:
            last = step + 1
            diverged = True
            break
    # delays at the final grid point
    tl = last * dt
    for ch in range(q):
        if counts[ch] == 0:
            continue
        while ptr[ch] + 1 < counts[ch] and bt[ch, ptr[ch] + 1] <= tl:
            ptr[ch] += 1
        dels[last, ch] = tl - bs[ch, ptr[ch]]
    return hist[: last + 1], dels[: last + 1], diverged


@functools.lru_cache(maxsize=1)
def _jit_loop():
    import numba

    return numba.njit(cache=False)(_rk4_loop)


def _is_jitted(f) -> bool:
    try:
        from numba.core.registry import CPUDispatcher
    except ImportError:  # pragma: no cover
        return False
    return isinstance(f, CPUDispatcher)


def integrate(f, initial_state, traces: DelayTraces, dt: float, horizon: float, equilibrium=None) -> Trajectory:
    """Classical RK4 on ``dx/dt = f(t, x, xd)`` with ``xd[i] = x(t - d_i(t))``.

    The history before ``t = 0`` is constant at ``initial_state``; delayed
    states are linearly interpolated from the stored grid. ``f`` compiled
    with ``numba.njit`` runs in a compiled loop, anything else in Python.
    Runs whose state norm passes ``1e6`` stop early and are flagged.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    gap = traces.min_gap()
    if dt > gap / 4.0:
        raise ValueError(f"dt = {dt:g} s too coarse for the shortest inter-arrival gap {gap:g} s (need dt <= gap/4)")
    x0 = np.asarray(initial_state, dtype=float).copy()
    nsteps = int(round(horizon / dt))
    bt, bs, counts = traces.packed()
    loop = _jit_loop() if _is_jitted(f) else _rk4_loop
    hist, dels, diverged = loop(f, x0, bt, bs, counts, float(dt), nsteps, DIVERGENCE_CAP)
    t = np.arange(hist.shape[0]) * dt
    eq = np.zeros_like(x0) if equilibrium is None else np.asarray(equilibrium, dtype=float)
    err = np.linalg.norm(hist - eq, axis=1)
    if diverged:
        log.warning("trajectory diverged at t = %.6g s", t[-1])
    return Trajectory(t, hist, dels, err, dt, nsteps * dt, diverged)


def stability_metrics(traj: Trajectory, equilibrium=None, band: float = 1e-3) -> dict:
    """Settling summary: settled iff the error stays below ``band`` over the last 10% of the horizon."""
    err = traj.err_norm if equilibrium is None else np.linalg.norm(traj.x - np.asarray(equilibrium), axis=1)
    if traj.divergent:
        return {"settled": False, "settling_time": None, "peak_error": float(np.max(err)), "final_error": DIVERGENCE_CAP}
    outside = np.nonzero(err >= band)[0]
    if outside.size == 0:
        settling = 0.0
    elif outside[-1] + 1 < err.size:
        settling = float(traj.t[outside[-1] + 1])
    else:
        settling = None
    tail = traj.t >= 0.9 * traj.horizon
    settled = bool(np.all(err[tail] < band))
    return {
        "settled": settled,
        "settling_time": settling,
        "peak_error": float(np.max(err)),
        "final_error": float(err[-1]),
    }
