"""Command-line interface: ``cbfmpc {simulate,verify,sweep,costs}``.

Exit codes
    0  success (simulate: feasible and audit clean; verify: certified)
    2  configuration error
    3  solver infeasibility
    4  safety violation in the audit
    5  verify: counterexample found
    6  verify: inconclusive (budget exhausted)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import certify
from . import __version__
from .config import ExperimentConfig, load, resolve, with_overrides
from .errors import ConfigError
from .nlp import SolveOptions
from .simloop import cumulative_costs, read_csv, simulate_and_audit, write_csv, write_summary

log = logging.getLogger("cbfmpc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_UNSAFE = 4
EXIT_FALSIFIED = 5
EXIT_INCONCLUSIVE = 6

VERDICT_EXIT = {certify.CERTIFIED: EXIT_OK, certify.FALSIFIED: EXIT_FALSIFIED,
                certify.INCONCLUSIVE: EXIT_INCONCLUSIVE}


def tool_version() -> str:
    return __version__


def simulate_exit(feasible: bool, audit_clean: bool) -> int:
    if not feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK if audit_clean else EXIT_UNSAFE


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str
    started: str
    wall_time: float
    outputs: list = field(default_factory=list)
    exit_code: int = 0

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        self.outputs = sorted(set(self.outputs) | {path.name})
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def resolve_jobs(flag: Optional[int]) -> int:
    """``CBF_MPC_THREADS`` wins over ``--jobs``; both default to the CPU count."""
    env = os.environ.get("CBF_MPC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"CBF_MPC_THREADS must be an integer, got {env!r}") from None
    else:
        n = flag if flag is not None else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError(f"job count must be >= 1, got {n}")
    return n


def _solver_opts(cfg: ExperimentConfig) -> SolveOptions:
    return SolveOptions(tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    ocp, ver = {}, {}
    if getattr(args, "mode", None):
        ocp["mode"] = args.mode
    if getattr(args, "cert", None):
        ver["cert"] = args.cert
    if getattr(args, "tol", None) is not None:
        ver["tol"] = args.tol
    if getattr(args, "budget", None) is not None:
        ver["budget"] = args.budget
    return with_overrides(cfg, ocp=ocp, verifier=ver) if ocp or ver else cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> tuple[int, list]:
    lg, audit, data = simulate_and_audit(cfg.scenario, _solver_opts(cfg))
    csv_path = write_csv(lg, out / "trajectory.csv")
    code = simulate_exit(lg.feasible, audit.clean)
    data["exit_code"] = code
    js = write_summary(data, out / "summary.json")
    if not lg.feasible:
        print(f"infeasible: {lg.message}", file=sys.stderr)
    elif not audit.clean:
        print(f"safety violation: first at step {audit.first_violation}, min margin {audit.min_margin:.3g}",
              file=sys.stderr)
    print(f"{cfg.scenario.name}: {lg.n_steps} steps, stage cost {data['stage_cost']:.6g}, "
          f"min margin {audit.min_margin:.3g}, exit {code}")
    return code, [csv_path.name, js.name]


def cmd_verify(cfg: ExperimentConfig, out: Path, jobs: int) -> tuple[int, list]:
    fn = certify.verify_qdtcbf if cfg.verifier_mode == "qdtcbf" else certify.verify_dtcbf
    rep = fn(cfg.verify, cfg.domain, cfg.verifier_tol, cfg.verifier_budget, jobs)
    path = out / "verification.json"
    path.write_text(rep.to_json(indent=2) + "\n")
    code = VERDICT_EXIT[rep.verdict]
    msg = f"{rep.mode}: {rep.verdict} ({rep.nodes_explored} nodes, {rep.wall_time:.1f}s)"
    if rep.counterexample is not None:
        msg += f"; counterexample {[round(float(c), 6) for c in rep.counterexample]} gap {rep.counterexample_gap:.3g}"
    print(msg)
    return code, [path.name]


def _sim_point(args):
    raw, N, g = args
    cfg = with_overrides(resolve(raw), ocp={"N": N}, certificate={"gamma_d": g})
    lg, audit, data = simulate_and_audit(cfg.scenario, _solver_opts(cfg))
    return {"N": N, "gamma_d": g, "tracking_cost": data["tracking_cost"], "actuation_cost": data["actuation_cost"],
            "stage_cost": data["stage_cost"], "feasible": int(lg.feasible), "audit_clean": int(audit.clean),
            "min_margin": audit.min_margin, "first_reaction_step": data["first_reaction_step"],
            "steps": lg.n_steps}


def _bisect_point(args):
    raw, mode, g, sw = args
    cfg = resolve(raw)
    t0 = time.perf_counter()
    b = certify.least_input_bound(mode, g, cfg.verify, bisection_tol=float(sw["bisection_tol"]),
                                  bracket=tuple(sw["bracket"]), domain=cfg.domain, tol=cfg.verifier_tol,
                                  budget=cfg.verifier_budget, screen_budget=int(sw["screen_budget"]))
    return {"mode": mode, "gamma_d": g, "least_input_bound": b, "wall_time": time.perf_counter() - t0}


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int) -> tuple[int, list]:
    sw = cfg.sweep
    gammas = [float(g) for g in sw["gammas"]]
    raw = cfg.snapshot()
    if sw["kind"] == "gamma_list":
        horizons = [int(n) for n in sw["horizons"]]
        grid = [(raw, n, g) for n in horizons for g in gammas]
        worker, name = _sim_point, "sweep_costs.csv"
    elif sw["kind"] == "bound_bisect":
        grid = [(raw, m, g, sw) for m in sw["modes"] for g in gammas]
        worker, name = _bisect_point, "sweep_bounds.csv"
    else:
        raise ConfigError(f"sweep.kind must be gamma_list or bound_bisect, got {sw['kind']!r}")
    if not grid:
        raise ConfigError("sweep grid is empty")
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(grid))) as ex:
            rows = list(ex.map(worker, grid))
    else:
        rows = [worker(p) for p in grid]
    path = out / name
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format(v, ".12g") if isinstance(v, float) else v for k, v in r.items()})
    for r in rows:
        print(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    code = EXIT_OK
    if sw["kind"] == "gamma_list":
        if any(not r["feasible"] for r in rows):
            code = EXIT_INFEASIBLE
        elif any(not r["audit_clean"] for r in rows):
            code = EXIT_UNSAFE
    return code, [path.name]


def cmd_costs(logs: Sequence[str], out: Optional[Path]) -> tuple[int, list]:
    rows = []
    for p in logs:
        try:
            d = read_csv(p)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read trajectory log {p}: {exc}") from exc
        tr, ac = float(d["tracking_cost"].sum()), float(d["actuation_cost"].sum())
        rows.append({"log": str(p), "tracking_cost": tr, "actuation_cost": ac, "stage_cost": tr + ac})
    for r in rows:
        print(f"{r['log']}: tracking {r['tracking_cost']:.6g}, actuation {r['actuation_cost']:.6g}, "
              f"stage {r['stage_cost']:.6g}")
    if out is None:
        return EXIT_OK, []
    path = out / "costs.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format(v, ".12g") if isinstance(v, float) else v for k, v in r.items()})
    return EXIT_OK, [path.name]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbfmpc", description="Certified MPC for two-agent lane merging.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--jobs", type=int, default=None, help="parallel workers (CBF_MPC_THREADS overrides)")

    s = sub.add_parser("simulate", help="closed-loop run with cost accounting and safety audit")
    common(s)
    s.add_argument("--mode", choices=("baseline", "certified"))

    v = sub.add_parser("verify", help="global certificate verification by interval branch and bound")
    common(v)
    v.add_argument("--cert", choices=("dtcbf", "qdtcbf"))
    v.add_argument("--tol", type=float)
    v.add_argument("--budget", type=int)

    w = sub.add_parser("sweep", help="cost table over gamma_d and N, or least input bounds over gamma_d")
    common(w)
    w.add_argument("--mode", choices=("baseline", "certified"))
    w.add_argument("--cert", choices=("dtcbf", "qdtcbf"), help="restrict a bound_bisect sweep to one condition")
    w.add_argument("--tol", type=float)
    w.add_argument("--budget", type=int)
    w.add_argument("--kind", choices=("gamma_list", "bound_bisect"))
    w.add_argument("--gammas", help="comma-separated gamma_d grid")
    w.add_argument("--horizons", help="comma-separated horizon lengths")

    c = sub.add_parser("costs", help="cumulative costs of trajectory CSV logs")
    c.add_argument("logs", nargs="+")
    c.add_argument("--out")
    return p


def _csv_list(text: Optional[str], cast):
    if text is None:
        return None
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        if args.command == "costs":
            out = _out_dir(args.out) if args.out else None
            code, outputs = cmd_costs(args.logs, out)
            cfg_snapshot = {}
        else:
            cfg = _apply_flags(load(args.config), args)
            if args.command == "sweep":
                upd = {}
                if args.kind:
                    upd["kind"] = args.kind
                if args.gammas is not None:
                    upd["gammas"] = _csv_list(args.gammas, float)
                if args.horizons is not None:
                    upd["horizons"] = _csv_list(args.horizons, int)
                if args.cert:
                    upd["modes"] = [args.cert]
                if upd:
                    cfg = with_overrides(cfg, sweep=upd)
            out = _out_dir(args.out)
            jobs = resolve_jobs(args.jobs)
            if args.command == "simulate":
                code, outputs = cmd_simulate(cfg, out)
            elif args.command == "verify":
                code, outputs = cmd_verify(cfg, out, jobs)
            else:
                code, outputs = cmd_sweep(cfg, out, jobs)
            cfg_snapshot = cfg.snapshot()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if out is not None:
        RunManifest(command=" ".join(["cbfmpc", *(argv if argv is not None else sys.argv[1:])]),
                    config=cfg_snapshot, tool_version=tool_version(), started=started,
                    wall_time=time.perf_counter() - t0, outputs=outputs, exit_code=code).write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
