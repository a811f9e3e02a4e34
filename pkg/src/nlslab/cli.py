"""Command-line front end: ``nlslab <subcommand> [--config PATH] [--output DIR]``.

Subcommands share one output directory.  Each writes its artifacts there and
records them in ``manifest.json`` together with the resolved configuration
and library versions.  Exit codes: 0 ok, 2 configuration error, 3 numerical
failure, 4 acceptance failure in ``verify``.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
from scipy import fft as sfft

from . import __version__
from .config import ConfigError, ExperimentConfig, canonical_hash
from .diagnostics import DiagnosticsError, gnuplot_script, radius_sensitivity, report_from_series
from .evolution import EvolutionConfig, NumericalBlowup, evolve
from .ground_state import GroundState, GroundStateError, solve_ground_state
from .io import SnapshotError, atomic_write_text, read_field, write_field, write_json
from .profile import Profile, ProfileError
from .remainder import RemainderError, RemainderProblem, WeightedSpaceParams, build_time_mesh, default_delta, fixed_point
from .spectral import Field

__all__ = ["main", "run", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL", "EXIT_ACCEPTANCE"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4
SUBCOMMANDS = ("ground-state", "build-profile", "remainder", "evolve", "diagnose", "verify", "all")
PIPELINE = ("ground-state", "build-profile", "remainder", "evolve", "diagnose")
NUMERICAL_ERRORS = (RemainderError, NumericalBlowup, GroundStateError, ProfileError, DiagnosticsError, SnapshotError, FloatingPointError)


class AcceptanceFailure(Exception):
    pass


def cache_dir() -> Path:
    return Path(os.environ.get("NLSLAB_CACHE") or Path.home() / ".cache" / "nlslab")


def versions() -> dict:
    return {"nlslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


class Run:
    """State shared by the subcommands of one invocation."""

    def __init__(self, cfg: ExperimentConfig, out: Path, seed: int, threads: int):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.threads = threads
        self.manifest_path = out / "manifest.json"
        self.manifest = self._load_manifest()
        self._gs: dict[int, GroundState] = {}

    def _load_manifest(self) -> dict:
        base = {"config": self.cfg.to_json(), "versions": versions(), "seed": self.seed, "steps": {}, "artifacts": []}
        if self.manifest_path.exists():
            try:
                old = json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError:
                old = {}
            # artifacts from earlier subcommands stay valid only for the same config
            if old.get("config") == base["config"] and old.get("seed") == self.seed:
                base["steps"] = old.get("steps", {})
                base["artifacts"] = old.get("artifacts", [])
        return base

    def mark(self, step: str, status: str, **info) -> None:
        self.manifest["steps"][step] = {"status": status, **info}
        states = [s["status"] for s in self.manifest["steps"].values()]
        self.manifest["status"] = "failed" if "failed" in states else "running" if "running" in states else "complete"
        write_json(self.manifest_path, self.manifest)

    def artifact(self, name: str) -> Path:
        if name not in self.manifest["artifacts"]:
            self.manifest["artifacts"].append(name)
            self.manifest["artifacts"].sort()
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    # shared building blocks

    def ground_state(self, d: int | None = None) -> GroundState:
        d = self.cfg.domain.dimension if d is None else d
        if d in self._gs:
            return self._gs[d]
        section = self.cfg.section("ground_state")
        key = canonical_hash({"d": d, "ground_state": section})
        path = cache_dir() / f"ground_state_d{d}_{key}.json"
        gs = None
        if path.exists():
            try:
                gs = GroundState.load(path)
            except (OSError, ValueError, KeyError):
                gs = None
        if gs is None:
            gs = solve_ground_state(d, tol=float(section["tol"]))
            atomic_write_text(path, json.dumps(gs.to_json()))
        self._gs[d] = gs
        return gs

    def profile(self) -> Profile:
        return Profile(self.cfg.bubbles, self.ground_state(), self.cfg.domain)

    def remainder_problem(self, prof: Profile) -> tuple[RemainderProblem, dict | None]:
        ws = self.cfg.section("weighted_space")
        fit = None
        if ws["delta"] == "fit":
            delta, fit = default_delta(prof)
        else:
            delta = float(ws["delta"])
        b = self.cfg.bubbles
        params = WeightedSpaceParams(delta, float(ws["alpha"]), b.lam, b.blow_time, self.cfg.domain.dimension)
        mesh = build_time_mesh(params, int(ws["mesh_size"]), float(ws["grading_ratio"]))
        return RemainderProblem(prof, params, mesh), fit


def _resolved_times(cfg: ExperimentConfig, count: int = 12) -> np.ndarray:
    """Diagnostic times with bubble width λ(T - t) of at least two grid cells."""
    b, dom = cfg.bubbles, cfg.domain
    w_min = max(2 * min(dom.spacing) / b.lam, 1e-3 * b.blow_time)
    w_max = 0.9 * b.blow_time
    if w_min >= w_max:
        raise DiagnosticsError("bubbles are unresolved on this grid at every time; refine the grid or increase λT")
    return b.blow_time - np.geomspace(w_max, w_min, count)


# subcommands


def cmd_ground_state(run: Run) -> dict:
    gs = run.ground_state()
    write_json(run.artifact("ground_state.json"), gs.to_json())
    return {"Q0": gs.initial_height, "l2_norm": gs.l2_norm, "grad_l2_norm": gs.grad_l2_norm}


def cmd_build_profile(run: Run) -> dict:
    prof = run.profile()
    b = run.cfg.bubbles
    write_field(run.artifact("profile/r_t0.nlsf"), Field(run.cfg.domain, prof.glued(0.0), 0.0))
    times = _resolved_times(run.cfg)
    for i, t in enumerate(times):
        write_field(run.artifact(f"profile/r_{i:03d}.nlsf"), Field(run.cfg.domain, prof.glued(t), float(t)))
    try:
        fit = prof.source_decay_fit()
    except ProfileError as exc:
        fit = {"delta_fit": None, "reason": str(exc)}
    info = {
        **fit,
        "D0_rho": prof.gs.decay_constants[1] * b.rho,
        "snapshot_times": times.tolist(),
        "bubbles": b.to_json(),
    }
    write_json(run.artifact("profile.json"), info)
    return {"delta_fit": fit["delta_fit"], "snapshots": len(times) + 1}


def cmd_remainder(run: Run) -> dict:
    problem, fit = run.remainder_problem(run.profile())
    ws = run.cfg.section("weighted_space")
    result = fixed_point(problem, tol=float(ws["tolerance"]), max_iter=int(ws["max_iter"]))
    traj = result.trajectory
    report = result.report()
    report["delta_source"] = "fit" if fit else "config"
    if fit:
        report["delta_fit"] = fit["delta_fit"]
        if fit["delta_fit"] is None:
            report["delta_source"] = "asymptotic rate (source underflows)"
    report["in_space"] = traj.in_space
    write_json(run.artifact("remainder.json"), report)
    write_field(run.artifact("remainder/u_t0.nlsf"), traj.field(0))
    write_field(run.artifact("remainder/h_t0.nlsf"), Field(run.cfg.domain, problem.glued(0) + traj.states[0], 0.0))
    return {"contraction_factor": result.contraction_factor, "iterations": result.iterations, "residual": result.residual}


def cmd_evolve(run: Run) -> dict:
    ev = run.cfg.section("evolution")
    if ev["initial"] == "constructed":
        path = run.out / "remainder" / "h_t0.nlsf"
        if not path.exists() or "remainder" not in run.manifest["steps"]:
            cmd_remainder(run)
        u0 = read_field(path)
    else:
        u0 = Field(run.cfg.domain, run.profile().glued(0.0), 0.0)
    cfg = EvolutionConfig(
        t_end=float(ev["t_end"]),
        dt_safety=float(ev["dt_safety"]),
        dt_max=float(ev["dt_max"]),
        resolution_guard=float(ev["resolution_guard"]),
    )
    stride = int(run.cfg.section("output")["snapshot_stride"])
    res = evolve(u0, cfg, snapshot_stride=stride)
    atomic_write_text(run.artifact("evolution.csv"), res.to_csv())
    for i, t in enumerate(sorted(res.snapshots)):
        write_field(run.artifact(f"snapshots/u_{i:05d}.nlsf"), res.snapshots[t])
    write_field(run.artifact("snapshots/final.nlsf"), res.final)
    summary = {
        "halt_reason": res.halt_reason,
        "t_final": float(res.times[-1]),
        "steps": int(len(res.times) - 1),
        "mass_drift": res.mass_drift(),
        "energy_drift": res.energy_drift(),
        "initial": ev["initial"],
    }
    write_json(run.artifact("evolution.json"), summary)
    return summary


def cmd_diagnose(run: Run) -> dict:
    paths = sorted((run.out / "profile").glob("r_[0-9]*.nlsf"))
    if not paths:
        cmd_build_profile(run)
        paths = sorted((run.out / "profile").glob("r_[0-9]*.nlsf"))
    series = [read_field(p) for p in paths]
    gs = run.ground_state()
    report = report_from_series(series, run.cfg.bubbles, gs)
    out = report.to_json()
    out["radius_sensitivity"] = radius_sensitivity(run.profile(), float(report.times[-1]))
    out["source"] = "glued profile snapshots"
    write_json(run.artifact("blowup_report.json"), out)
    atomic_write_text(run.artifact("blowup.gp"), gnuplot_script(report))
    return {"gradient_slope_relative_error": report.rate["relative_error"], "times": len(series)}


def cmd_verify(run: Run, criteria=None) -> dict:
    from .verify import format_table, run_all

    results = run_all(seed=run.seed, criteria=criteria, provider=run.ground_state)
    write_json(run.artifact("verify.json"), [r.to_json() for r in results])
    print(format_table(results), flush=True)
    failed = [r.criterion for r in results if not r.passed]
    summary = {"passed": [r.criterion for r in results if r.passed], "failed": failed}
    if failed:
        raise AcceptanceFailure(f"acceptance criteria failed: {failed}", summary)
    return summary


COMMANDS = {
    "ground-state": cmd_ground_state,
    "build-profile": cmd_build_profile,
    "remainder": cmd_remainder,
    "evolve": cmd_evolve,
    "diagnose": cmd_diagnose,
}


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    cfg_path = Path(path)
    try:
        data = json.loads(cfg_path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and "config" in data and "versions" in data:
        data = data["config"]  # re-run from a manifest
    return ExperimentConfig.from_dict(data)


def _error(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}, sort_keys=True) + "\n")
    return code


def run(subcommand: str, config_path=None, output=None, threads: int = 0, seed: int | None = None, criteria=None) -> int:
    try:
        cfg = _load_config(config_path)
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            raw = cfg.to_json()
            raw["output"]["seed"] = seed
            cfg = ExperimentConfig.from_dict(raw)
        if threads < 0:
            raise ConfigError("--threads must be >= 0")
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    out = Path(output or cfg.section("output")["directory"])
    out.mkdir(parents=True, exist_ok=True)
    workers = threads or os.cpu_count() or 1
    r = Run(cfg, out, int(cfg.section("output")["seed"]), workers)
    steps = PIPELINE if subcommand == "all" else (subcommand,)
    current = steps[0]
    try:
        with sfft.set_workers(workers):
            for current in steps:
                r.mark(current, "running")
                info = cmd_verify(r, criteria) if current == "verify" else COMMANDS[current](r)
                r.mark(current, "complete", result=info)
    except AcceptanceFailure as exc:
        r.mark(current, "failed", reason=exc.args[0], result=exc.args[1])
        return _error("acceptance", exc.args[0], EXIT_ACCEPTANCE, step=current)
    except NUMERICAL_ERRORS as exc:
        r.mark(current, "failed", reason=str(exc))
        return _error("numerical", str(exc), EXIT_NUMERICAL, step=current, exception=type(exc).__name__)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nlslab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration or an earlier manifest.json")
        p.add_argument("--output", help="artifact directory (overrides output.directory)")
        p.add_argument("--threads", type=int, default=0, help="FFT worker threads, 0 = all cores")
        p.add_argument("--seed", type=int, default=None, help="seed for randomized property corpora")
        if name == "verify":
            p.add_argument("--criteria", help="comma-separated subset of criteria, e.g. 1,2,8")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    criteria = None
    if getattr(args, "criteria", None):
        try:
            criteria = [int(c) for c in args.criteria.split(",")]
            if any(c not in range(1, 9) for c in criteria):
                raise ValueError
        except ValueError:
            return _error("config", "--criteria must list numbers between 1 and 8", EXIT_CONFIG)
    return run(args.subcommand, args.config, args.output, args.threads, args.seed, criteria)


if __name__ == "__main__":
    sys.exit(main())
