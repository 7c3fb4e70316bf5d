"""Command-line front end: generate windows, classify them, and run experiments.

Exit codes: 0 on success, 2 for bad inputs (malformed files, invalid flag
combinations), 1 for unexpected runtime failures.  Every command is
reproducible from its flag set plus the seed; CSV outputs echo the resolved
flags as '#' comment lines so result files are self-describing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .classify import MosRule, classify, rule_from_label
from .montecarlo import (
    ExperimentPlan,
    report_to_csv,
    run_convergence_study,
    run_experiment,
    run_rank_study,
)
from .scenario import (
    ClutterBasis,
    ScenarioSpec,
    load_window,
    save_window,
    synthesize_window,
    window_to_dict,
)
from .numkit import RngStream

SEED_ENV_VAR = "CLUTTERSCOPE_SEED"

_DEFAULT_ANGLES = (-20.0, 0.0, 10.0)


class InputError(ValueError):
    """User-facing input problem; maps to exit code 2."""


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _resolve_seed(arg_seed: int | None) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return 0


def _parse_edges(text: str | None) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise InputError(f"bad edge list {text!r}") from exc


def _parse_cpr_grid(text: str) -> tuple[float, ...]:
    """Parse 'start:stop:step' (stop inclusive) or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return (float(parts[0]),)
        if len(parts) == 3:
            start, stop, step = (float(p) for p in parts)
            if step <= 0 or stop < start:
                raise ValueError
            return tuple(np.arange(start, stop + step / 2.0, step))
    except ValueError as exc:
        raise InputError(f"bad CPR grid {text!r}; use a number or start:stop:step") from exc
    raise InputError(f"bad CPR grid {text!r}; use a number or start:stop:step")


def _parse_rules(text: str) -> tuple[MosRule, ...]:
    try:
        rules = tuple(rule_from_label(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not rules:
        raise InputError("no selection rules given")
    return rules


def _scenario_args(parser: argparse.ArgumentParser, with_edges: bool = True) -> None:
    parser.add_argument("--model", type=int, required=True, choices=(1, 2))
    parser.add_argument("--hyp", type=int, required=True, help="hypothesis index")
    parser.add_argument("--n", type=int, default=9, help="array channels")
    parser.add_argument("--kp", type=int, default=8, help="primary snapshots")
    parser.add_argument("--ks", type=int, default=32, help="secondary snapshots")
    parser.add_argument("--cnr", type=float, default=30.0, help="clutter-to-noise ratio, dB")
    parser.add_argument(
        "--angles",
        type=str,
        default=None,
        help="comma-separated clutter angles in degrees (default -20,0,10)",
    )
    parser.add_argument("--noise-power", type=float, default=1.0)
    parser.add_argument("--alpha", type=float, default=1.0, help="second-edge CPR scale, model 1")
    parser.add_argument("--beta", type=float, default=1.0, help="second-edge power scale, model 2")
    parser.add_argument(
        "--alt-angles",
        type=str,
        default=None,
        help="model-2 perturbed-segment angles (keeps the rank, changes the subspace)",
    )
    if with_edges:
        parser.add_argument("--edges", type=str, default=None, help="comma-separated edge bins")


def _parse_angles(text: str | None) -> tuple[float, ...]:
    if text is None:
        return _DEFAULT_ANGLES
    try:
        return tuple(float(p) for p in text.split(",") if p.strip() != "")
    except ValueError as exc:
        raise InputError(f"bad angle list {text!r}") from exc


def _build_spec(args: argparse.Namespace, cpr_db: float, edges: tuple[int, ...]) -> ScenarioSpec:
    basis = ClutterBasis(
        angles_deg=_parse_angles(args.angles),
        n_channels=args.n,
        cnr_db=args.cnr,
        noise_power=args.noise_power,
    )
    alt = None if args.alt_angles is None else _parse_angles(args.alt_angles)
    try:
        return ScenarioSpec(
            model=args.model,
            hypothesis=args.hyp,
            k_p=args.kp,
            k_s=args.ks,
            basis=basis,
            edges=edges,
            cpr_db=cpr_db,
            alpha=args.alpha,
            beta=args.beta,
            alt_angles_deg=alt,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _echo_lines(args: argparse.Namespace, seed: int, skip: tuple[str, ...] = ()) -> list[str]:
    lines = [f"command = {args.command}", f"seed = {seed}"]
    for key in sorted(vars(args)):
        if key in ("command", "func", "seed") or key in skip:
            continue
        lines.append(f"{key} = {getattr(args, key)}")
    return lines


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _cmd_gen(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed)
    spec = _build_spec(args, args.cpr, _parse_edges(args.edges))
    window = synthesize_window(spec, RngStream(seed, args.stream))
    text = json.dumps(window_to_dict(window)) + "\n"
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    """Classify a stored window and emit the decision as JSON on stdout."""
    try:
        window = load_window(args.window)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read window: {exc}") from exc
    if args.rule == "gic" and args.rho is None:
        raise InputError("--rule gic needs --rho")
    rule = MosRule("gic", args.rho) if args.rule == "gic" else rule_from_label(args.rule)
    if args.r == "auto":
        rank: int | str = "auto"
    else:
        try:
            rank = int(args.r)
        except ValueError as exc:
            raise InputError(f"--r must be an integer or 'auto', got {args.r!r}") from exc
    try:
        outcome = classify(window, args.model, rule, r=rank, n_max=args.n_max)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    payload = {
        "chosen": outcome.chosen_score.label,
        "edges": list(outcome.chosen_score.edges),
        "r": outcome.r_used,
        "scores": [
            {
                "hypothesis": s.label,
                "loglik": s.loglik,
                "param_count": s.param_count,
                "penalized": s.penalized,
            }
            for s in outcome.scores
        ],
    }
    sys.stdout.write(json.dumps(payload) + "\n")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    """Monte Carlo accuracy sweep over a CPR grid, written as CSV."""
    seed = _resolve_seed(args.seed)
    grid = _parse_cpr_grid(args.cpr)
    edges = _parse_edges(args.edges)
    spec = _build_spec(args, grid[0], edges)
    try:
        plan = ExperimentPlan(
            base=spec,
            rules=_parse_rules(args.rules),
            trials=args.trials,
            master_seed=seed,
            cpr_grid_db=grid,
            edge_mode="random" if args.random_edges else "fixed",
            rank_mode=args.rank,
            n_max=args.n_max,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    report = run_experiment(plan, jobs=args.jobs)
    _write_text(args.out, report_to_csv(report, _echo_lines(args, seed)))
    return 0


def _cmd_rank(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed)
    spec = _build_spec(args, args.cpr, _parse_edges(args.edges))
    try:
        rule = rule_from_label(args.rule)
        accuracy, counts = run_rank_study(
            spec, args.trials, seed, rule=rule, m_upper=args.m_upper
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    lines = [f"# {line}\n" for line in _echo_lines(args, seed)]
    lines.append("estimated_rank,count,accuracy_at_true_rank,trials\n")
    for r_hat, count in enumerate(counts):
        if r_hat == 0:
            continue
        lines.append(f"{r_hat},{count},{_fmt(accuracy)},{args.trials}\n")
    _write_text(args.out, "".join(lines))
    return 0


def _cmd_convergence(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args.seed)
    spec = _build_spec(args, args.cpr, ())
    try:
        residuals = run_convergence_study(spec, args.trials, seed, n_max=args.n_max)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    lines = [f"# {line}\n" for line in _echo_lines(args, seed)]
    lines.append("sweep,mean_delta_psi\n")
    for sweep, value in enumerate(residuals, start=1):
        lines.append(f"{sweep},{_fmt(float(value))}\n")
    _write_text(args.out, "".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clutterscope",
        description="Reference-window scenario classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="synthesize a window and write it as JSON")
    _scenario_args(p_gen)
    p_gen.add_argument("--cpr", type=float, default=10.0, help="clutter power ratio, dB")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--stream", type=int, default=0, help="stream index under the seed")
    p_gen.add_argument("--out", type=str, default=None, help="output path, '-' for stdout")
    p_gen.set_defaults(func=_cmd_gen)

    p_cls = sub.add_parser("classify", help="classify a stored window")
    p_cls.add_argument("window", type=str, help="window JSON path")
    p_cls.add_argument("--model", type=int, required=True, choices=(1, 2))
    p_cls.add_argument("--rule", type=str, default="bic", help="aic, gic2, gic4, bic, or gic")
    p_cls.add_argument("--rho", type=float, default=None, help="rho for --rule gic")
    p_cls.add_argument("--r", type=str, default="auto", help="clutter rank or 'auto'")
    p_cls.add_argument("--n-max", type=int, default=6, help="scale-fit sweep count")
    p_cls.set_defaults(func=cmd_classify)

    p_sweep = sub.add_parser("sweep", help="Monte Carlo accuracy sweep, CSV output")
    _scenario_args(p_sweep)
    p_sweep.add_argument("--cpr", type=str, default="0:25:1", help="grid start:stop:step or value")
    p_sweep.add_argument("--trials", type=int, default=1000)
    p_sweep.add_argument("--rules", type=str, default="aic,gic2,gic4,bic")
    p_sweep.add_argument("--random-edges", action="store_true", help="draw edges per trial")
    p_sweep.add_argument("--rank", type=str, default="known", choices=("known", "auto"))
    p_sweep.add_argument("--n-max", type=int, default=6)
    p_sweep.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", type=str, default=None, help="CSV path, '-' for stdout")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rank = sub.add_parser("rank", help="rank-estimation accuracy study, CSV output")
    _scenario_args(p_rank)
    p_rank.add_argument("--cpr", type=float, default=10.0)
    p_rank.add_argument("--trials", type=int, default=1000)
    p_rank.add_argument("--rule", type=str, default="bic", help="penalty for the rank stage")
    p_rank.add_argument("--m-upper", type=int, default=None, help="largest candidate rank")
    p_rank.add_argument("--seed", type=int, default=None)
    p_rank.add_argument("--out", type=str, default=None)
    p_rank.set_defaults(func=_cmd_rank)

    p_conv = sub.add_parser(
        "convergence", help="scale-fit convergence study on the heterogeneous hypothesis"
    )
    _scenario_args(p_conv, with_edges=False)
    p_conv.add_argument("--cpr", type=float, default=10.0)
    p_conv.add_argument("--trials", type=int, default=1000)
    p_conv.add_argument("--n-max", type=int, default=6)
    p_conv.add_argument("--seed", type=int, default=None)
    p_conv.add_argument("--out", type=str, default=None)
    p_conv.set_defaults(func=_cmd_convergence)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
