"""Monte Carlo harness: per-trial streams, metric aggregation, and report formats.

Trial ``t`` of an experiment always uses the random stream ``(master_seed, t)``,
so trials are independent of execution order and a run can be split across
worker processes without changing any reported number.  All floating-point
aggregation happens in trial order after the per-trial records are collected.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .classify import BIC, MosRule, apply_rule, estimate_rank, score_hypotheses
from .numkit import RngStream
from .scenario import HYPOTHESIS_COUNT, ScenarioSpec, edge_arity, synthesize_window

_CHILD_EDGE_DRAW = 64  # trial substream reserved for randomized edge positions

_Z95 = 1.959963984540054


def wilson_halfwidth(p_hat: float, trials: int, z: float = _Z95) -> float:
    """Halfwidth of the Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("need at least one trial")
    z2 = z * z
    return (
        z
        * np.sqrt(p_hat * (1.0 - p_hat) / trials + z2 / (4.0 * trials * trials))
        / (1.0 + z2 / trials)
    )


def rms_edges(records: list[tuple[tuple[int, ...], tuple[int, ...]]]) -> np.ndarray:
    """Positional root-mean-square edge errors over (true, estimated) pairs."""
    if not records:
        raise ValueError("no edge records")
    arity = len(records[0][0])
    for true, est in records:
        if len(true) != arity or len(est) != arity:
            raise ValueError("edge records must share one arity")
    true = np.array([rec[0] for rec in records], dtype=float)
    est = np.array([rec[1] for rec in records], dtype=float)
    return np.sqrt(np.mean(np.abs(est - true) ** 2, axis=0))


def convergence_residual(objective_trace: np.ndarray) -> np.ndarray:
    """Relative objective change per sweep; an exact zero denominator gives inf."""
    trace = np.asarray(objective_trace, dtype=float)
    if trace.ndim != 1 or trace.size < 2:
        raise ValueError("need a trace with at least two entries")
    current = trace[1:]
    diff = np.abs(trace[1:] - trace[:-1])
    out = np.full(diff.shape, np.inf)
    nonzero = current != 0.0
    out[nonzero] = diff[nonzero] / np.abs(current[nonzero])
    return out


@dataclass(frozen=True)
class ExperimentPlan:
    """One classification experiment: a scenario template swept over CPR points.

    ``edge_mode`` may be ``"fixed"`` (edges come from the template) or
    ``"random"`` (each trial draws admissible edges uniformly).  ``rank_mode``
    is ``"known"`` (use the true rank) or ``"auto"`` (estimate it per trial
    and record how often the estimate is right).
    """

    base: ScenarioSpec
    rules: tuple[MosRule, ...]
    trials: int
    master_seed: int
    cpr_grid_db: tuple[float, ...] | None = None
    edge_mode: str = "fixed"
    rank_mode: str = "known"
    n_max: int = 6

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not self.rules:
            raise ValueError("need at least one selection rule")
        if self.edge_mode not in ("fixed", "random"):
            raise ValueError("edge_mode must be 'fixed' or 'random'")
        if self.rank_mode not in ("known", "auto"):
            raise ValueError("rank_mode must be 'known' or 'auto'")
        grid = self.cpr_grid_db
        grid = (self.base.cpr_db,) if grid is None else tuple(float(c) for c in grid)
        if not grid:
            raise ValueError("CPR grid must be non-empty")
        object.__setattr__(self, "cpr_grid_db", grid)
        if self.edge_mode == "random" and edge_arity(self.base.model, self.base.hypothesis) == 0:
            raise ValueError("randomized edges make no sense without an edge hypothesis")


def draw_random_edges(spec: ScenarioSpec, rng: RngStream) -> tuple[int, ...]:
    """Edges drawn uniformly over the admissible range of the spec's hypothesis."""
    gen = rng.generator()
    r, ks = spec.r, spec.k_s
    arity = edge_arity(spec.model, spec.hypothesis)
    if arity == 1:
        return (int(gen.integers(r, ks - r + 1)),)
    if arity == 2:
        k2 = int(gen.integers(r, ks // 2 + 1))
        k3 = int(gen.integers(ks // 2 + 1, ks - r + 1))
        return (k2, k3)
    return ()


@dataclass
class _TrialResult:
    chosen: list[int]
    chosen_edges: list[tuple[int, ...]]
    true_edges: tuple[int, ...]
    rank_ok: bool | None
    delta_psi: np.ndarray | None


def _resolve_spec(plan: ExperimentPlan, cpr_db: float, rng: RngStream) -> ScenarioSpec:
    changes: dict = {"cpr_db": cpr_db}
    if plan.edge_mode == "random":
        changes["edges"] = draw_random_edges(plan.base, rng.child(_CHILD_EDGE_DRAW))
    return replace(plan.base, **changes)


def _run_trial(plan: ExperimentPlan, cpr_db: float, t: int) -> _TrialResult:
    rng = RngStream(plan.master_seed, t)
    spec = _resolve_spec(plan, cpr_db, rng)
    window = synthesize_window(spec, rng)
    rank_ok: bool | None = None
    r_used = spec.r
    if plan.rank_mode == "auto":
        r_hat = estimate_rank(window, rule=BIC)
        rank_ok = r_hat == spec.r
        r_used = r_hat
    scores = score_hypotheses(window, spec.model, r_used, n_max=plan.n_max)
    delta_psi = None
    if spec.model == 1:
        trace = scores[1].nuisance.get("objective_trace")
        if trace is not None:
            delta_psi = convergence_residual(trace)
    chosen: list[int] = []
    chosen_edges: list[tuple[int, ...]] = []
    for rule in plan.rules:
        outcome = apply_rule(scores, rule, window.n, window.k_p, window.k_s, r_used)
        chosen.append(outcome.chosen_index)
        chosen_edges.append(outcome.chosen_score.edges)
    return _TrialResult(
        chosen=chosen,
        chosen_edges=chosen_edges,
        true_edges=spec.edges,
        rank_ok=rank_ok,
        delta_psi=delta_psi,
    )


def _run_trial_star(args: tuple) -> _TrialResult:
    return _run_trial(*args)


@dataclass
class CellMetrics:
    """Aggregated results of one (CPR point, rule) cell."""

    cpr_db: float
    rule: str
    trials: int
    pcc: float
    ci_halfwidth: float
    confusion: np.ndarray
    rms: np.ndarray | None
    rms_pairs: int
    rms_excluded: int
    rank_accuracy: float | None


@dataclass
class MetricReport:
    """Full experiment output: one cell per (CPR, rule) plus fit diagnostics."""

    model: int
    true_hypothesis: int
    trials: int
    cells: list[CellMetrics] = field(default_factory=list)
    delta_psi: dict[float, np.ndarray] = field(default_factory=dict)

    def cell(self, cpr_db: float, rule_label: str) -> CellMetrics:
        for cell in self.cells:
            if cell.cpr_db == cpr_db and cell.rule == rule_label:
                return cell
        raise KeyError(f"no cell for cpr={cpr_db}, rule={rule_label}")

    def to_jsonable(self) -> dict:
        return {
            "model": self.model,
            "true_hypothesis": self.true_hypothesis,
            "trials": self.trials,
            "cells": [
                {
                    "cpr_db": c.cpr_db,
                    "rule": c.rule,
                    "trials": c.trials,
                    "pcc": c.pcc,
                    "ci_halfwidth": c.ci_halfwidth,
                    "confusion": c.confusion.tolist(),
                    "rms": None if c.rms is None else c.rms.tolist(),
                    "rms_pairs": c.rms_pairs,
                    "rms_excluded": c.rms_excluded,
                    "rank_accuracy": c.rank_accuracy,
                }
                for c in self.cells
            ],
            "delta_psi": {f"{k:.17g}": v.tolist() for k, v in self.delta_psi.items()},
        }


def run_experiment(plan: ExperimentPlan, jobs: int = 1) -> MetricReport:
    """Run every trial of the plan and aggregate the per-cell metrics.

    ``jobs`` > 1 distributes trials over worker processes; the report is
    bit-identical to a serial run because each trial owns a fixed stream and
    aggregation order is fixed by trial index.
    """
    n_hyp = HYPOTHESIS_COUNT[plan.base.model]
    truth = plan.base.hypothesis
    report = MetricReport(
        model=plan.base.model, true_hypothesis=truth, trials=plan.trials
    )
    for cpr_db in plan.cpr_grid_db:
        args = [(plan, cpr_db, t) for t in range(plan.trials)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_trial_star, args, chunksize=16))
        else:
            results = [_run_trial(*a) for a in args]

        rank_hits = [res.rank_ok for res in results if res.rank_ok is not None]
        rank_acc = float(np.mean(rank_hits)) if rank_hits else None
        traces = [res.delta_psi for res in results if res.delta_psi is not None]
        if traces:
            report.delta_psi[cpr_db] = np.mean(np.stack(traces), axis=0)

        for j, rule in enumerate(plan.rules):
            confusion = np.zeros((n_hyp, n_hyp), dtype=int)
            edge_records: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
            excluded = 0
            for res in results:
                confusion[truth, res.chosen[j]] += 1
                if res.true_edges:
                    if len(res.chosen_edges[j]) == len(res.true_edges):
                        edge_records.append((res.true_edges, res.chosen_edges[j]))
                    else:
                        excluded += 1
            pcc = confusion[truth, truth] / plan.trials
            report.cells.append(
                CellMetrics(
                    cpr_db=cpr_db,
                    rule=rule.label,
                    trials=plan.trials,
                    pcc=float(pcc),
                    ci_halfwidth=float(wilson_halfwidth(pcc, plan.trials)),
                    confusion=confusion,
                    rms=rms_edges(edge_records) if edge_records else None,
                    rms_pairs=len(edge_records),
                    rms_excluded=excluded,
                    rank_accuracy=rank_acc,
                )
            )
    return report


def run_rank_study(
    spec: ScenarioSpec,
    trials: int,
    master_seed: int,
    rule: MosRule = BIC,
    m_upper: int | None = None,
) -> tuple[float, np.ndarray]:
    """Rank-estimation accuracy and the histogram of estimated ranks."""
    if trials < 1:
        raise ValueError("need at least one trial")
    upper = m_upper if m_upper is not None else spec.n - 1
    counts = np.zeros(upper + 1, dtype=int)
    for t in range(trials):
        rng = RngStream(master_seed, t)
        window = synthesize_window(spec, rng)
        counts[estimate_rank(window, m_upper=m_upper, rule=rule)] += 1
    accuracy = counts[spec.r] / trials if spec.r <= upper else 0.0
    return float(accuracy), counts


def run_convergence_study(
    spec: ScenarioSpec, trials: int, master_seed: int, n_max: int = 6
) -> np.ndarray:
    """Mean per-sweep relative objective change of the scale fit on the full window.

    Fits only the fully heterogeneous eigenvalue-rescaling hypothesis, which
    is the fit whose convergence the sweep count is calibrated against.
    """
    from .estimate import cyclic_gamma_fit, primary_noise_and_eigs, subspace_estimate

    if spec.model != 1:
        raise ValueError("convergence study applies to the eigenvalue-rescaling model")
    if trials < 1:
        raise ValueError("need at least one trial")
    residuals = np.zeros(n_max)
    for t in range(trials):
        rng = RngStream(master_seed, t)
        window = synthesize_window(spec, rng)
        est = primary_noise_and_eigs(window.z_p, spec.r)
        u_hat = subspace_estimate(window.z_p, window.z_s).u_hat
        s_s = (np.abs(u_hat.conj().T @ window.z_s) ** 2).sum(axis=1)
        fit = cyclic_gamma_fit(s_s[: spec.r], est, float(spec.k_s), n_max=n_max)
        residuals += convergence_residual(fit.objective_trace)
    return residuals / trials


# ---------------------------------------------------------------------------
# Report serialization

CSV_COLUMNS = (
    "cpr_db",
    "rule",
    "hypothesis_true",
    "pcc",
    "ci_halfwidth",
    "rms_k1",
    "rms_k2",
    "rms_k3",
    "rank_acc",
    "trials",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _rms_columns(model: int, hypothesis: int) -> tuple[str, ...]:
    """CSV columns receiving the positional RMS errors for a truth hypothesis."""
    arity = edge_arity(model, hypothesis)
    if arity == 0:
        return ()
    if arity == 2:
        return ("rms_k2", "rms_k3")
    return ("rms_k1",)


def report_to_csv(report: MetricReport, header_lines: list[str] | None = None) -> str:
    """Render a report as CSV, optionally preceded by '#'-prefixed header lines."""
    buf = io.StringIO()
    for line in header_lines or []:
        buf.write(f"# {line}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    rms_cols = _rms_columns(report.model, report.true_hypothesis)
    prefix = "I" if report.model == 1 else "II"
    for cell in report.cells:
        row = {
            "cpr_db": _fmt(cell.cpr_db),
            "rule": cell.rule,
            "hypothesis_true": f"H_{prefix}{report.true_hypothesis}",
            "pcc": _fmt(cell.pcc),
            "ci_halfwidth": _fmt(cell.ci_halfwidth),
            "rms_k1": "",
            "rms_k2": "",
            "rms_k3": "",
            "rank_acc": _fmt(cell.rank_accuracy),
            "trials": _fmt(cell.trials),
        }
        if cell.rms is not None:
            for col, value in zip(rms_cols, cell.rms):
                row[col] = _fmt(float(value))
        buf.write(",".join(row[c] for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report.to_jsonable(), indent=2, sort_keys=True)
