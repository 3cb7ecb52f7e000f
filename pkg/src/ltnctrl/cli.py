"""Command-line front end: ``ltn-ctrl <command> ...``.

Exit codes: 0 success, 1 validation error, 2 infeasible synthesis,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .closed_loop import (
    FeedforwardController,
    IntegralController,
    lyapunov_violations,
    metrics_json,
    run_closed_loop,
    steady_state_metrics,
)
from .data import EPS_SAT, DataSet, RichnessError, build_data_matrices, check_richness, collect_random_dataset
from .model import AdmissibilityError, DimensionError, LtnSystem, parse_disturbance
from .scenarios import ArousalScenario, RodentScenario, arousal_level, arousal_target
from .sdp import SolverSettings
from .synthesis import (
    InfeasibleSynthesisError,
    NumericalError,
    SynthesisResult,
    assemble_ff_program,
    assemble_integral_program,
    synthesize,
    validate_certificate,
)

log = logging.getLogger("ltnctrl")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _box(text: str) -> tuple[float, float]:
    lo, hi = _floats(text)
    return float(lo), float(hi)


def _meta(text: str) -> dict:
    out = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        if key.strip() not in ("alpha", "s") or not val:
            raise argparse.ArgumentTypeError(f"expected alpha=..,s=.., got {text!r}")
        out[key.strip()] = float(val)
    if set(out) != {"alpha", "s"}:
        raise argparse.ArgumentTypeError("both alpha and s are required")
    return out


def _disturbance(text: str):
    try:
        return parse_disturbance(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ltn-ctrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        if out:
            sp.add_argument("--out", default="runs", help="parent directory for run folders")

    def synth_flags(sp):
        sp.add_argument("--controller", choices=("ff", "integral"), default="ff")
        sp.add_argument("--vertex-mode", choices=("full", "reduced"), default=None)
        sp.add_argument("--eps-sat", type=float, default=EPS_SAT)

    def meta_flags(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--system", help="system JSON (only alpha and s are read)")
        g.add_argument("--system-meta", type=_meta, help="alpha=..,s=..")

    c = sub.add_parser("collect", help="sample a random dataset")
    c.add_argument("--system", required=True)
    c.add_argument("--td", type=int, required=True)
    c.add_argument("--seed-data", type=int, default=0)
    c.add_argument("--x-box", type=_box, default=None, help="LO,HI (default: full state box)")
    c.add_argument("--u-box", type=_box, default=(0.0, 10.0), help="LO,HI")
    c.add_argument("--disturbance", type=_disturbance, default=None)
    common(c)

    c = sub.add_parser("check-data", help="report saturation masks and per-node ranks")
    c.add_argument("--dataset", required=True)
    c.add_argument("--eps-sat", type=float, default=EPS_SAT)
    meta_flags(c)

    c = sub.add_parser("synthesize", help="solve the LMIs for controller gains")
    c.add_argument("--dataset", required=True)
    meta_flags(c)
    synth_flags(c)
    common(c)

    c = sub.add_parser("closed-loop", help="simulate recorded gains on a plant")
    c.add_argument("--system", required=True)
    c.add_argument("--result", required=True, help="synthesis result JSON")
    c.add_argument("--dataset", help="dataset JSON, needed for the integral equilibrium")
    c.add_argument("--reference", type=_floats, required=True)
    c.add_argument("--x0", type=_floats, default=None)
    c.add_argument("--seed-init", type=int, default=0)
    c.add_argument("--seed-noise", type=int, default=0)
    c.add_argument("--disturbance", type=_disturbance, default=None)
    c.add_argument("--horizon", type=int, default=2000)
    c.add_argument("--tol", type=float, default=1e-2)
    c.add_argument("--force", action="store_true", help="clamp an inadmissible x0 instead of failing")
    common(c)

    c = sub.add_parser("case-study", help="run a complete scenario")
    c.add_argument("scenario", choices=("rodent", "arousal"))
    synth_flags(c)
    c.add_argument("--td", type=int, default=None)
    c.add_argument("--seed-data", type=int, default=0)
    c.add_argument("--seed-init", type=int, default=0)
    c.add_argument("--seed-noise", type=int, default=0)
    c.add_argument("--seed-system", type=int, default=0, help="arousal network draw")
    c.add_argument("--disturbance", type=_disturbance, default=None,
                   help="closed-loop disturbance, uniform:LO:HI or none")
    c.add_argument("--data-disturbance", type=_disturbance, default=None,
                   help="also corrupt the sampled data with this disturbance")
    c.add_argument("--horizon", type=int, default=None)
    c.add_argument("--tol", type=float, default=1e-2)
    c.add_argument("--reference", type=_floats, default=None)
    c.add_argument("--system", help="override the scenario plant with a system JSON")
    common(c)

    c = sub.add_parser("export-sdp", help="write the assembled SDP as triplet JSON")
    c.add_argument("--dataset", required=True)
    meta_flags(c)
    synth_flags(c)
    common(c)
    return p


# -- run directories ------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    if hasattr(v, "low") and hasattr(v, "high"):
        return str(v)
    return v


def _config(args) -> dict:
    skip = {"verbose", "out"}
    return {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}


def _versions() -> dict:
    import cvxpy
    import scipy

    return {
        "ltnctrl": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "cvxpy": cvxpy.__version__,
    }


def run_dir(args) -> Path:
    cfg = _config(args)
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    name = f"{args.command}-{getattr(args, 'scenario', '') or 'run'}-{digest[:12]}"
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "config": cfg,
        "config_hash": digest,
        "versions": _versions(),
        "seeds": {k: v for k, v in cfg.items() if k.startswith("seed")},
        "kernel_backend": kernels.BACKEND,
        "solver": SolverSettings().solver,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2))


def _meta_from(args) -> tuple[float, float]:
    if getattr(args, "system_meta", None):
        return args.system_meta["alpha"], args.system_meta["s"]
    d = json.loads(Path(args.system).read_text())
    return float(d["alpha"]), float(d["s"])


# -- commands -------------------------------------------------------------------


def cmd_collect(args) -> int:
    sys_ = LtnSystem.load(args.system)
    ds = collect_random_dataset(sys_, args.td, args.x_box, args.u_box, args.seed_data, args.disturbance)
    out = run_dir(args)
    ds.save(out / "dataset.json")
    print(out / "dataset.json")
    return EXIT_OK


def cmd_check_data(args) -> int:
    alpha, s = _meta_from(args)
    dm = build_data_matrices(DataSet.load(args.dataset), alpha, s, args.eps_sat)
    rep = check_richness(dm)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_INVALID


def _synthesize(dm, args) -> tuple[SynthesisResult, dict]:
    res = synthesize(dm, args.controller, args.vertex_mode)
    report = validate_certificate(res, dm, full_recheck=res.vertex_mode == "reduced" and dm.n <= 8)
    return res, report.to_dict()


def cmd_synthesize(args) -> int:
    alpha, s = _meta_from(args)
    dm = build_data_matrices(DataSet.load(args.dataset), alpha, s, args.eps_sat)
    res, report = _synthesize(dm, args)
    out = run_dir(args)
    res.save(out / "result.json")
    _write_json(out / "certificate.json", report)
    print(f"gamma={res.gamma:.6g} certificate={'PASS' if report['passed'] else 'FAIL'} -> {out}")
    return EXIT_OK


def _controller(res: SynthesisResult, r, dm=None):
    if res.controller_kind == "integral":
        return IntegralController.from_result(res, r, dm)
    return FeedforwardController.from_result(res, r)


def _simulate(sys_, ctrl, args, out: Path, extra: dict | None = None) -> dict:
    if getattr(args, "x0", None) is not None:
        x0 = args.x0
    else:
        x0 = np.random.default_rng(args.seed_init).uniform(0.0, sys_.state_upper_bound(), sys_.n)
    tr = run_closed_loop(sys_, ctrl, x0, args.horizon, args.disturbance, args.seed_noise,
                         force=getattr(args, "force", False))
    tr.to_csv(out / "trace.csv")
    metrics = steady_state_metrics(tr, tail_steps=min(500, tr.x.shape[0]), tol=args.tol)
    metrics["converged"] = bool(metrics["final_error_inf"] < args.tol)
    if tr.V is not None and args.disturbance is None:
        metrics["lyapunov_violations"] = len(lyapunov_violations(tr))
    if ctrl.kind == "integral" and ctrl.xi_star is not None:
        metrics["xi_star"] = ctrl.xi_star.tolist()
        metrics["xi_final_error_inf"] = float(np.abs(tr.xi[-1] - ctrl.xi_star).max())
    metrics.update(extra or {})
    metrics_json(metrics, out / "metrics.json")
    return metrics


def cmd_closed_loop(args) -> int:
    sys_ = LtnSystem.load(args.system)
    res = SynthesisResult.load(args.result)
    dm = None
    if args.dataset:
        dm = build_data_matrices(DataSet.load(args.dataset), sys_.alpha, sys_.s)
    ctrl = _controller(res, args.reference, dm)
    out = run_dir(args)
    m = _simulate(sys_, ctrl, args, out)
    print(f"final error {m['final_error_inf']:.3g} converged={m['converged']} -> {out}")
    return EXIT_OK


def cmd_case_study(args) -> int:
    extra = {}
    if args.scenario == "rodent":
        sc = RodentScenario()
        sys_ = sc.system()
        T_d = args.td or sc.T_d
        x_box, u_box = sc.x_box, sc.u_box
        r = np.array(sc.reference)
        horizon = sc.horizon
        phi = None
    else:
        sc = ArousalScenario(seed=args.seed_system)
        draw = sc.draw()
        sys_, phi = draw.system, draw.phi
        T_d = args.td or sc.T_d
        x_box, u_box = sc.x_box, sc.u_box
        r = arousal_target(draw, sc.level)
        horizon = sc.horizon
        extra = {"phi": phi.tolist(), "resamples": draw.resamples, "target_level": sc.level}
    if args.system:
        sys_ = LtnSystem.load(args.system)
    if args.reference is not None:
        r = args.reference
    if args.horizon is None:
        args.horizon = horizon

    out = run_dir(args)
    sys_.save(out / "system.json")
    ds = collect_random_dataset(sys_, T_d, x_box, u_box, args.seed_data, args.data_disturbance)
    ds.save(out / "dataset.json")
    dm = build_data_matrices(ds, sys_.alpha, sys_.s, args.eps_sat)
    rep = check_richness(dm)
    _write_json(out / "richness.json", rep.to_dict())
    if not rep.passed:
        print(rep.summary(), file=sys.stderr)
        raise RichnessError(f"data not rich enough: deficient nodes {rep.deficient}")
    res, report = _synthesize(dm, args)
    res.save(out / "result.json")
    _write_json(out / "certificate.json", report)
    ctrl = _controller(res, r, dm)
    m = _simulate(sys_, ctrl, args, out, extra)
    if phi is not None:
        x = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1, usecols=range(1, sys_.n + 1))
        m["final_arousal"] = float(arousal_level(phi, x[-1]))
        metrics_json(m, out / "metrics.json")
    print(
        f"{args.scenario}/{args.controller}: gamma={res.gamma:.3g} "
        f"final error {m['final_error_inf']:.3g} converged={m['converged']} -> {out}"
    )
    return EXIT_OK


def cmd_export_sdp(args) -> int:
    alpha, s = _meta_from(args)
    dm = build_data_matrices(DataSet.load(args.dataset), alpha, s, args.eps_sat)
    build = assemble_integral_program if args.controller == "integral" else assemble_ff_program
    prog = build(dm, alpha, args.vertex_mode)
    out = run_dir(args)
    prog.problem.save_json(out / "sdp.json")
    print(out / "sdp.json")
    return EXIT_OK


COMMANDS = {
    "collect": cmd_collect,
    "check-data": cmd_check_data,
    "synthesize": cmd_synthesize,
    "closed-loop": cmd_closed_loop,
    "case-study": cmd_case_study,
    "export-sdp": cmd_export_sdp,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.filterwarnings("ignore", module="cvxpy")
    try:
        return COMMANDS[args.command](args)
    except InfeasibleSynthesisError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RichnessError, AdmissibilityError, DimensionError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
