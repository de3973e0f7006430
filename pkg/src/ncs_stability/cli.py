"""``ncs``: batch front end for synthesis, analysis, bound search and simulation.

Every command writes ``<command>.json`` into the output directory and then
rebuilds ``report.json`` from all such artifacts present there.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analyzer, lmi, robot, sim
from .config import ConfigError, ToolkitConfig, defaults_help, load_config
from .sdp import SolverConfig

log = logging.getLogger("ncs_stability")

COMMANDS = (
    "synth-lyapunov",
    "estimate-mk",
    "verify-assumptions",
    "analyze",
    "bound",
    "simulate",
    "export-sdpa",
    "report",
)
SECTION_ORDER = COMMANDS[:-1]
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_FINDING, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


class Session:
    """One command invocation: config plus lazily built shared objects."""

    def __init__(self, cfg: ToolkitConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.params = robot.RobotParams(**cfg.robot)
        self.domain = robot.StateDomain.default(
            self.params, cfg.domain["position_halfwidth"], cfg.domain["velocity_halfwidth"]
        )
        self.solver = SolverConfig(**cfg.solver)
        self._base = None
        self._cert = None
        self._M = None

    @property
    def fixture_dir(self) -> Path:
        d = self.cfg.analysis["fixture_dir"]
        return Path(d) if d else analyzer.DATA_DIR

    def certificate(self):
        if self._cert is None:
            self._cert = analyzer.synthesize_lyapunov(self.params.error_dynamics(), self.solver)
        return self._cert

    def channel_bounds(self):
        if self._M is None:
            a = self.cfg.analysis
            if a["mk_source"] == "fixture":
                self._M = [analyzer.load_matrix(self.fixture_dir / f"M{k}.txt") for k in range(1, 5)]
            else:
                self._M = robot.estimate_Mk(self.params, self.domain, a["mk_samples"], a["mk_seed"], a["mk_margin"])
        return self._M

    def bounds(self, r) -> analyzer.SystemBounds:
        if self._base is None:
            if self.cfg.analysis["bounds_source"] == "fixture":
                d = self.fixture_dir
                F, W, S = (analyzer.load_matrix(d / f"{n}.txt") for n in ("F", "W", "S"))
            else:
                c = self.certificate()
                F, W, S = c.F, c.W, c.S
            self._base = analyzer.SystemBounds(F, W, S, tuple(self.channel_bounds()), (1.0,) * 4)
        return self._base.with_delays(r)

    def bounds_echo(self) -> dict:
        b = self.bounds(1.0)
        return {
            "bounds_source": self.cfg.analysis["bounds_source"],
            "mk_source": self.cfg.analysis["mk_source"],
            "F": _mat(b.F),
            "W": _mat(b.W),
            "S": _mat(b.S),
            "M": [_mat(m) for m in b.M],
        }


# ---------------------------------------------------------------- commands


def cmd_synth_lyapunov(s: Session):
    c = s.certificate()
    bad = c.violations(tol=1e-9)
    section = {
        "alpha": c.alpha,
        "P": _mat(c.P),
        "Q": _mat(c.Q),
        "W": _mat(c.W),
        "S": _mat(c.S),
        "F": _mat(c.F),
        "violations": bad,
    }
    return section, EXIT_FINDING if bad else EXIT_OK


def cmd_estimate_mk(s: Session):
    a = s.cfg.analysis
    M = robot.estimate_Mk(s.params, s.domain, a["mk_samples"], a["mk_seed"], a["mk_margin"])
    for k, Mk in enumerate(M, 1):
        np.savetxt(s.out / f"M{k}.txt", Mk, fmt="%.10g", header=f"M{k} estimated over the configured state box")
    section = {
        "domain": {"lower": _mat(s.domain.lower[None])[0], "upper": _mat(s.domain.upper[None])[0]},
        "samples": a["mk_samples"],
        "seed": a["mk_seed"],
        "margin": a["mk_margin"],
        "M": [_mat(m) for m in M],
    }
    return section, EXIT_OK


def cmd_verify_assumptions(s: Session):
    a = s.cfg.analysis
    rep = robot.verify_assumptions(s.bounds(2.0 * a["T"]), s.params, s.domain, a["verify_samples"], a["verify_seed"])
    section = {"bounds": s.bounds_echo(), "ok": rep.ok, "relations": rep.summary()}
    return section, EXIT_OK if rep.ok else EXIT_FINDING


def _delays(s: Session) -> float:
    a = s.cfg.analysis
    return a["r_override"] if a["r_override"] is not None else 2.0 * a["T"]


def cmd_analyze(s: Session):
    r = _delays(s)
    v = analyzer.check_stability(s.bounds(r), s.solver, s.cfg.analysis["w_transpose"])
    section = {
        "bounds": s.bounds_echo(),
        "T": s.cfg.analysis["T"],
        "r": [r] * 4,
        "status": v.status,
        "margin": v.margin,
        "iterations": v.iterations,
    }
    return section, EXIT_OK if v.feasible else EXIT_FINDING


def cmd_bound(s: Session):
    a = s.cfg.analysis
    try:
        res = analyzer.max_delay_bound(
            lambda T: s.bounds(2.0 * T), a["t_lo"], a["t_hi"], a["tol"], s.solver, a["w_transpose"]
        )
    except ValueError as exc:
        return {"bounds": s.bounds_echo(), "error": str(exc), "t_star": None}, EXIT_FINDING
    probes = [{"T": T, "status": v.status, "margin": v.margin, "iterations": v.iterations} for T, v in res.probes]
    _plot_margins(s.out / "margin_vs_T.svg", probes, res.t_star)
    section = {
        "bounds": s.bounds_echo(),
        "t_star": res.t_star,
        "t_star_ms": res.t_star * 1e3,
        "bracket": [res.t_star, res.t_hi],
        "tolerance": res.tolerance,
        "monotone": res.monotone(),
        "probes": probes,
    }
    return section, EXIT_OK


def cmd_simulate(s: Session):
    sc = s.cfg.scenario
    T = sc["control_cycle_T"]
    rhs = robot.make_rhs(s.params)
    eq = s.params.equilibrium
    x0 = eq + np.asarray(sc["initial_error"], dtype=float)
    rows, runs = [], []
    for seed in sc["seeds"]:
        try:
            scen = sim.NetworkScenario(
                control_cycle_T=T,
                transmission_delay_max=sc["transmission_delay_max"],
                sampling_bound_h=sc["sampling_bound_h"],
                max_successive_losses=sc["max_successive_losses"],
                loss_probability=sc["loss_probability"],
                seed=seed,
                horizon=sc["horizon"],
                cycle_jitter=sc["cycle_jitter"],
                delay_cap=2.0 * T if sc["enforce_2T"] else None,
            )
            traces = sim.generate_delays(scen, 4, robot.CHANNELS)
            traj = sim.integrate(rhs, x0, traces, sc["dt"], sc["horizon"], eq)
        except ValueError as exc:
            raise InputError(f"scenario: {exc}") from None
        m = sim.stability_metrics(traj, eq)
        m.update(seed=seed, peak_delay=_mat(traces.peak()), delay_bound=scen.delay_bound())
        rows.append(m)
        runs.append(traj)
    runs[0].to_csv(s.out / "trajectory.csv", stride=sc["csv_stride"])
    _plot_errors(s.out / "error_norm.svg", runs, sc["seeds"])
    section = {"control_cycle_T": T, "runs": rows, "all_settled": all(r["settled"] for r in rows)}
    return section, EXIT_OK if section["all_settled"] else EXIT_FINDING


def cmd_export_sdpa(s: Session):
    r = _delays(s)
    problem = analyzer.build_certificate(s.bounds(r), s.cfg.analysis["w_transpose"])
    (s.out / "problem.dat-s").write_text(lmi.export_sdpa(problem))
    section = {"file": "problem.dat-s", "r": [r] * 4, "variables": problem.m, "blocks": problem.block_dims()}
    return section, EXIT_OK


HANDLERS = {
    "synth-lyapunov": cmd_synth_lyapunov,
    "estimate-mk": cmd_estimate_mk,
    "verify-assumptions": cmd_verify_assumptions,
    "analyze": cmd_analyze,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "export-sdpa": cmd_export_sdpa,
}


# ---------------------------------------------------------------- plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "ncs"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def _plot_margins(path, probes, t_star):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    pts = sorted(probes, key=lambda p: p["T"])
    ax.plot([p["T"] * 1e3 for p in pts], [p["margin"] for p in pts], "o-")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.axvline(t_star * 1e3, color="tab:red", ls="--", label=f"T* = {t_star * 1e3:.4f} ms")
    ax.set_xlabel("control cycle T [ms]")
    ax.set_ylabel("feasibility margin")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def _plot_errors(path, runs, seeds):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for traj, seed in zip(runs, seeds):
        stride = max(1, traj.t.size // 2000)
        ax.semilogy(traj.t[::stride], np.maximum(traj.err_norm[::stride], 1e-16), lw=0.8, label=f"seed {seed}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|x - x_eq|")
    if len(runs) <= 10:
        ax.legend(fontsize="small")
    _save(fig, path)
    plt.close(fig)


# ---------------------------------------------------------------- driver


def _inputs_echo(cfg: ToolkitConfig) -> dict:
    d = cfg.as_dict()
    d.pop("output_dir")
    return d


def rebuild_report(out: Path) -> dict | None:
    sections = {}
    for name in SECTION_ORDER:
        p = out / f"{name}.json"
        if p.is_file():
            sections[name] = json.loads(p.read_text())
    if not sections:
        return None
    report = {"sections": sections}
    _write_json(out / "report.json", report)
    return report


def run(command: str, cfg: ToolkitConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if command == "report":
        if rebuild_report(out) is None:
            print(f"no artifacts found in {out}", file=sys.stderr)
            return EXIT_INPUT
        return EXIT_OK
    session = Session(cfg, out)
    section, status = HANDLERS[command](session)
    artifact = {"command": command, "exit_status": status, "inputs": _inputs_echo(cfg), "results": section}
    _write_json(out / f"{command}.json", artifact)
    rebuild_report(out)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncs",
        description="Delay-dependent stability analysis of networked control loops.",
        epilog=defaults_help()
        + "\n\n--seed sets solver.seed, analysis.mk_seed, analysis.verify_seed and scenario.seeds = [seed]."
        + "\nNCS_LOG = error | info | debug selects the log level (default error)."
        + "\nexit status: 0 success, 1 infeasible or violated, 2 input error.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", help="output directory (default: output_dir from the config)")
    parser.add_argument("--seed", type=int, help="override every seed")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config key, e.g. analysis.T=0.0005 (value parsed as JSON)")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("NCS_LOG", "error").lower()
    if level not in LOG_LEVELS:
        print(f"NCS_LOG: unknown level {level!r}, expected one of {sorted(LOG_LEVELS)}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = list(args.override)
    if args.seed is not None:
        overrides += [f"solver.seed={args.seed}", f"analysis.mk_seed={args.seed}",
                      f"analysis.verify_seed={args.seed}", f"scenario.seeds=[{args.seed}]"]
    try:
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg.output_dir)
        return run(args.command, cfg, out)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
