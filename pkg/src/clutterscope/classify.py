"""Penalized-likelihood classification of reference-window scenarios.

Each hypothesis gets a compressed log-likelihood (nuisance parameters replaced
by their ML estimates, candidate edges maximized over) and a parameter count;
a model-order-selection rule then picks the hypothesis minimizing
``-2 * loglik + kappa * param_count``.  The log-likelihoods keep the constant
``-N (K_P + K_S) log(pi)`` term so values are comparable across tools.

Scoring is split from rule application: ``score_hypotheses`` does all the
likelihood work once, and ``apply_rule`` turns those scores into a decision
for any rule, which keeps multi-rule Monte Carlo sweeps cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .estimate import (
    SIGMA2_FLOOR_EPS,
    PrimaryEstimates,
    fit_gamma_profiles,
    primary_noise_and_eigs,
    subspace_estimate,
)
from .scenario import HYPOTHESIS_COUNT, DataWindow


@dataclass(frozen=True)
class MosRule:
    """Model-order-selection rule; ``rho`` is required for (and only for) GIC."""

    kind: str
    rho: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("aic", "gic", "bic"):
            raise ValueError("rule kind must be one of: aic, gic, bic")
        if (self.kind == "gic") != (self.rho is not None):
            raise ValueError("rho must be given exactly when kind is 'gic'")
        if self.rho is not None and self.rho <= 0:
            raise ValueError("rho must be positive")

    @property
    def label(self) -> str:
        if self.kind != "gic":
            return self.kind
        rho = self.rho
        return f"gic{int(rho)}" if float(rho).is_integer() else f"gic{rho}"


AIC = MosRule("aic")
GIC2 = MosRule("gic", 2.0)
GIC4 = MosRule("gic", 4.0)
BIC = MosRule("bic")

_NAMED_RULES = {rule.label: rule for rule in (AIC, GIC2, GIC4, BIC)}


def rule_from_label(label: str) -> MosRule:
    """Parse a rule label such as ``aic``, ``bic``, ``gic2`` or ``gic3.5``."""
    label = label.strip().lower()
    if label in _NAMED_RULES:
        return _NAMED_RULES[label]
    if label.startswith("gic"):
        try:
            return MosRule("gic", float(label[3:]))
        except ValueError as exc:
            raise ValueError(f"bad GIC label: {label!r}") from exc
    raise ValueError(f"unknown rule label: {label!r}")


def penalty_factor(rule: MosRule, n: int, k_p: int, k_s: int) -> float:
    """Penalty weight kappa for one rule at the given window geometry."""
    if rule.kind == "aic":
        return 2.0
    if rule.kind == "gic":
        return 1.0 + float(rule.rho)
    return float(np.log(2.0 * n * (k_p + k_s)))


def param_count(model: int, hypothesis: int, r: int, n: int) -> int:
    """Real free-parameter count of a hypothesis at clutter rank r.

    Every hypothesis pays ``p = r (2n - r)`` for the shared low-rank subspace
    plus one for the noise power; the rest depends on how many independent
    eigenvalue or scale sets and edge positions the hypothesis introduces.
    """
    if not 1 <= r < n:
        raise ValueError("rank must satisfy 1 <= r < n")
    if model not in HYPOTHESIS_COUNT or not 0 <= hypothesis < HYPOTHESIS_COUNT[model]:
        raise ValueError("unknown model/hypothesis pair")
    p = r * (2 * n - r)
    if model == 1:
        return (p + 1, p + r + 1, p + r + 2, p + 2 * r + 3)[hypothesis]
    return (p + 1, 2 * p + 1, 2 * p + 2, 3 * p + 3, 3 * p + 2)[hypothesis]


@dataclass(frozen=True)
class HypothesisScore:
    """Scored hypothesis: compressed log-likelihood, complexity, and extras.

    ``penalized`` is filled in once a rule is applied; scores coming straight
    out of the likelihood stage carry ``None`` there.
    """

    hypothesis: tuple[int, int]
    loglik: float
    param_count: int
    edges: tuple[int, ...] = ()
    nuisance: dict = field(default_factory=dict)
    penalized: float | None = None

    @property
    def label(self) -> str:
        model, index = self.hypothesis
        return f"H_{'I' if model == 1 else 'II'}{index}"


@dataclass(frozen=True)
class ClassificationOutcome:
    """Decision of one rule on one window, with all per-hypothesis scores."""

    chosen: tuple[int, int]
    scores: tuple[HypothesisScore, ...]
    r_used: int
    r_estimated: bool = False

    @property
    def chosen_index(self) -> int:
        return self.chosen[1]

    @property
    def chosen_score(self) -> HypothesisScore:
        return next(s for s in self.scores if s.hypothesis == self.chosen)


# ---------------------------------------------------------------------------
# Model 1: eigenvalue-rescaling hypotheses


def _trace_terms(diags: np.ndarray, weights: np.ndarray, sigma2: float, r: int) -> np.ndarray:
    """Sum of projected powers over their fitted spectra; broadcasts over rows."""
    lead = (diags[..., :r] * weights).sum(axis=-1)
    return lead + diags[..., r:].sum(axis=-1) / sigma2


def _score_model1(window: DataWindow, r: int, n_max: int) -> tuple[HypothesisScore, ...]:
    z_p, z_s = window.z_p, window.z_s
    n, k_p, k_s = window.n, window.k_p, window.k_s
    if r >= min(n, k_p):
        raise ValueError("rank must be below both the channel count and k_p")
    if k_s < 2 * r:
        raise ValueError("secondary window too short for the edge grids")
    est = primary_noise_and_eigs(z_p, r)
    u_hat = subspace_estimate(z_p, z_s).u_hat
    sigma2, lam = est.sigma2, est.lambdas

    proj_p = np.abs(u_hat.conj().T @ z_p) ** 2
    proj_s = np.abs(u_hat.conj().T @ z_s) ** 2
    s_p = proj_p.sum(axis=1)
    prefix = np.zeros((k_s + 1, n))
    np.cumsum(proj_s.T, axis=0, out=prefix[1:])
    s_s = prefix[-1]

    w = 1.0 / (sigma2 + lam)
    t_lam = float(np.log(sigma2 + lam).sum())
    const = -n * (k_p + k_s) * np.log(np.pi)
    noise_logs = (k_p + k_s) * (n - r) * np.log(sigma2)
    tr_p = float(_trace_terms(s_p, w, sigma2, r))
    g_all = _trace_terms(prefix, w, sigma2, r)

    # Candidate edge grids.
    half = k_s // 2
    edges_one = np.arange(r, k_s - r + 1)
    keeps_head = edges_one > half  # leading side keeps the primary covariance
    c1_diag = np.where(keeps_head[:, None], prefix[edges_one], s_s - prefix[edges_one])
    c2_diag = s_s - c1_diag
    k_eff_one = np.where(keeps_head, k_s - edges_one, edges_one)
    edges_left = np.arange(r, half + 1)
    edges_right = np.arange(half + 1, k_s - r + 1)
    left_diag = prefix[edges_left]
    right_diag = s_s - prefix[edges_right]
    k_eff_left = edges_left.astype(float)
    k_eff_right = (k_s - edges_right).astype(float)

    # One batched fit covers the full secondary window and every candidate block.
    n_one, n_left = edges_one.size, edges_left.size
    s_batch = np.vstack(
        [s_s[None, :r], c2_diag[:, :r], left_diag[:, :r], right_diag[:, :r]]
    )
    k_batch = np.concatenate([[float(k_s)], k_eff_one, k_eff_left, k_eff_right])
    gammas, traces, no_clutter = fit_gamma_profiles(s_batch, k_batch, est, n_max)
    gam_full = gammas[0]
    gam_one = gammas[1 : 1 + n_one]
    gam_left = gammas[1 + n_one : 1 + n_one + n_left]
    gam_right = gammas[1 + n_one + n_left :]

    shared = {"sigma2": sigma2, "lambdas": lam.copy(), "degenerate": est.degenerate}

    h0 = const - (k_p + k_s) * t_lam - noise_logs - tr_p - float(_trace_terms(s_s, w, sigma2, r))
    score0 = HypothesisScore((1, 0), h0, param_count(1, 0, r, n), (), dict(shared))

    c_full = sigma2 + gam_full * lam
    h1 = (
        const
        - k_p * t_lam
        - k_s * float(np.log(c_full).sum())
        - noise_logs
        - tr_p
        - float(_trace_terms(s_s, 1.0 / c_full, sigma2, r))
    )
    score1 = HypothesisScore(
        (1, 1),
        h1,
        param_count(1, 1, r, n),
        (),
        dict(shared)
        | {
            "gammas": gam_full,
            "objective_trace": traces[0],
            "no_clutter": no_clutter,
        },
    )

    c_one = sigma2 + gam_one * lam
    h2_vec = (
        const
        - (k_p + k_s - k_eff_one) * t_lam
        - k_eff_one * np.log(c_one).sum(axis=1)
        - noise_logs
        - tr_p
        - _trace_terms(c1_diag, w, sigma2, r)
        - (c2_diag[:, :r] / c_one).sum(axis=1)
        - c2_diag[:, r:].sum(axis=1) / sigma2
    )
    j2 = int(np.argmax(h2_vec))
    score2 = HypothesisScore(
        (1, 2),
        float(h2_vec[j2]),
        param_count(1, 2, r, n),
        (int(edges_one[j2]),),
        dict(shared) | {"gammas": gam_one[j2]},
    )

    c_left = sigma2 + gam_left * lam
    c_right = sigma2 + gam_right * lam
    a_vec = (
        edges_left * t_lam
        - k_eff_left * np.log(c_left).sum(axis=1)
        - (left_diag[:, :r] / c_left).sum(axis=1)
        - left_diag[:, r:].sum(axis=1) / sigma2
        + g_all[edges_left]
    )
    b_vec = (
        -edges_right * t_lam
        - k_eff_right * np.log(c_right).sum(axis=1)
        - (right_diag[:, :r] / c_right).sum(axis=1)
        - right_diag[:, r:].sum(axis=1) / sigma2
        - g_all[edges_right]
    )
    h3_grid = (const - k_p * t_lam - noise_logs - tr_p) + a_vec[:, None] + b_vec[None, :]
    j_left, j_right = np.unravel_index(int(np.argmax(h3_grid)), h3_grid.shape)
    score3 = HypothesisScore(
        (1, 3),
        float(h3_grid[j_left, j_right]),
        param_count(1, 3, r, n),
        (int(edges_left[j_left]), int(edges_right[j_right])),
        dict(shared)
        | {"gammas_left": gam_left[j_left], "gammas_right": gam_right[j_right]},
    )
    return score0, score1, score2, score3


# ---------------------------------------------------------------------------
# Model 2: covariance-rescaling hypotheses


def _model2_ll(
    mu_segments: Sequence[np.ndarray],
    count_segments: Sequence[np.ndarray | float],
    r: int,
    n: int,
    k_tot: int,
):
    """Compressed log-likelihood for independently scaled segments.

    Eigenvalue arrays broadcast over leading candidate-grid axes, so a whole
    edge grid is evaluated in one call.  Returns (loglik, sigma2, lambda sets).
    """
    trailing = sum(mu[..., r:].sum(axis=-1) for mu in mu_segments)
    trace_total = sum(mu.sum(axis=-1) for mu in mu_segments)
    floor = SIGMA2_FLOOR_EPS * trace_total / (k_tot * n)
    sigma2 = np.asarray(np.maximum(trailing / (k_tot * (n - r)), floor))
    ll = -n * k_tot * np.log(np.pi) - k_tot * (n - r) * np.log(sigma2) - trailing / sigma2
    lambda_sets = []
    for mu, count in zip(mu_segments, count_segments):
        count = np.asarray(count, dtype=float)
        lam = np.clip(mu[..., :r] / count[..., None] - sigma2[..., None], 0.0, None)
        denom = sigma2[..., None] + lam
        ll = ll - count * np.log(denom).sum(axis=-1) - (mu[..., :r] / denom).sum(axis=-1)
        lambda_sets.append(lam)
    return ll, sigma2, lambda_sets


def _eigs_desc(grams: np.ndarray) -> np.ndarray:
    return np.clip(np.linalg.eigvalsh(grams)[..., ::-1], 0.0, None)


def _score_model2(window: DataWindow, r: int) -> tuple[HypothesisScore, ...]:
    z_p, z_s = window.z_p, window.z_s
    n, k_p, k_s = window.n, window.k_p, window.k_s
    if not 1 <= r < n:
        raise ValueError("rank must satisfy 1 <= r < n")
    if k_p <= r or k_s < 2 * r:
        raise ValueError("window too short for the configured rank")
    k_tot = k_p + k_s
    gram_p = z_p @ z_p.conj().T
    outer = np.einsum("ik,jk->kij", z_s, z_s.conj())
    prefix = np.zeros((k_s + 1, n, n), dtype=complex)
    np.cumsum(outer, axis=0, out=prefix[1:])
    gram_s = prefix[-1]

    mu_p = _eigs_desc(gram_p)
    mu_s = _eigs_desc(gram_s)
    mu_z = _eigs_desc(gram_p + gram_s)

    ll0, sig0, lams0 = _model2_ll([mu_z], [float(k_tot)], r, n, k_tot)
    score0 = HypothesisScore(
        (2, 0),
        float(ll0),
        param_count(2, 0, r, n),
        (),
        {"sigma2": float(sig0), "lambda_sets": tuple(l.copy() for l in lams0)},
    )

    ll1, sig1, lams1 = _model2_ll([mu_p, mu_s], [float(k_p), float(k_s)], r, n, k_tot)
    score1 = HypothesisScore(
        (2, 1),
        float(ll1),
        param_count(2, 1, r, n),
        (),
        {"sigma2": float(sig1), "lambda_sets": tuple(l.copy() for l in lams1)},
    )

    half = k_s // 2
    edges_one = np.arange(r, k_s - r + 1)
    keeps_head = edges_one > half
    big_gram = np.where(
        keeps_head[:, None, None], prefix[edges_one], gram_s - prefix[edges_one]
    )
    mu_big = _eigs_desc(gram_p + big_gram)
    mu_small = _eigs_desc(gram_s - big_gram)
    count_big = k_p + np.where(keeps_head, edges_one, k_s - edges_one).astype(float)
    count_small = np.where(keeps_head, k_s - edges_one, edges_one).astype(float)
    ll2_vec, sig2, lams2 = _model2_ll([mu_big, mu_small], [count_big, count_small], r, n, k_tot)
    j2 = int(np.argmax(ll2_vec))
    score2 = HypothesisScore(
        (2, 2),
        float(ll2_vec[j2]),
        param_count(2, 2, r, n),
        (int(edges_one[j2]),),
        {"sigma2": float(sig2[j2]), "lambda_sets": tuple(l[j2].copy() for l in lams2)},
    )

    edges_left = np.arange(r, half + 1)
    edges_right = np.arange(half + 1, k_s - r + 1)
    mu_head = _eigs_desc(prefix[edges_left])[:, None, :]
    mu_tail = _eigs_desc(gram_s - prefix[edges_right])[None, :, :]
    mid_gram = (
        gram_p[None, None] + prefix[edges_right][None, :] - prefix[edges_left][:, None]
    )
    mu_mid = _eigs_desc(mid_gram.reshape(-1, n, n)).reshape(
        edges_left.size, edges_right.size, n
    )
    count_mid = k_p + (edges_right[None, :] - edges_left[:, None]).astype(float)
    count_head = np.broadcast_to(edges_left[:, None].astype(float), count_mid.shape)
    count_tail = np.broadcast_to((k_s - edges_right)[None, :].astype(float), count_mid.shape)
    ll3_grid, sig3, lams3 = _model2_ll(
        [mu_mid, np.broadcast_to(mu_head, mu_mid.shape), np.broadcast_to(mu_tail, mu_mid.shape)],
        [count_mid, count_head, count_tail],
        r,
        n,
        k_tot,
    )
    j_left, j_right = np.unravel_index(int(np.argmax(ll3_grid)), ll3_grid.shape)
    score3 = HypothesisScore(
        (2, 3),
        float(ll3_grid[j_left, j_right]),
        param_count(2, 3, r, n),
        (int(edges_left[j_left]), int(edges_right[j_right])),
        {
            "sigma2": float(sig3[j_left, j_right]),
            "lambda_sets": tuple(l[j_left, j_right].copy() for l in lams3),
        },
    )

    mu_head4 = _eigs_desc(prefix[edges_one])
    mu_tail4 = _eigs_desc(gram_s - prefix[edges_one])
    mu_p_grid = np.broadcast_to(mu_p, (edges_one.size, n))
    counts4 = [
        np.full(edges_one.size, float(k_p)),
        edges_one.astype(float),
        (k_s - edges_one).astype(float),
    ]
    ll4_vec, sig4, lams4 = _model2_ll([mu_p_grid, mu_head4, mu_tail4], counts4, r, n, k_tot)
    j4 = int(np.argmax(ll4_vec))
    score4 = HypothesisScore(
        (2, 4),
        float(ll4_vec[j4]),
        param_count(2, 4, r, n),
        (int(edges_one[j4]),),
        {"sigma2": float(sig4[j4]), "lambda_sets": tuple(l[j4].copy() for l in lams4)},
    )
    return score0, score1, score2, score3, score4


# ---------------------------------------------------------------------------
# Public scoring and decision surface


def score_hypotheses(
    window: DataWindow, model: int, r: int, n_max: int = 6
) -> tuple[HypothesisScore, ...]:
    """Rule-independent compressed log-likelihoods of every hypothesis."""
    if model == 1:
        return _score_model1(window, r, n_max)
    if model == 2:
        return _score_model2(window, r)
    raise ValueError("model must be 1 or 2")


def compressed_ll_model1(
    window: DataWindow, hypothesis: int, r: int, n_max: int = 6
) -> HypothesisScore:
    """Compressed log-likelihood of one eigenvalue-rescaling hypothesis."""
    return _score_model1(window, r, n_max)[hypothesis]


def compressed_ll_model2(window: DataWindow, hypothesis: int, r: int) -> HypothesisScore:
    """Compressed log-likelihood of one covariance-rescaling hypothesis."""
    return _score_model2(window, r)[hypothesis]


def _apply_kappa(
    scores: Sequence[HypothesisScore], kappa: float, r_used: int, r_estimated: bool
) -> ClassificationOutcome:
    final = tuple(
        replace(s, penalized=-2.0 * s.loglik + kappa * s.param_count) for s in scores
    )
    best = 0
    for i in range(1, len(final)):
        if final[i].penalized < final[best].penalized:  # ties keep the lower index
            best = i
    return ClassificationOutcome(
        chosen=final[best].hypothesis, scores=final, r_used=r_used, r_estimated=r_estimated
    )


def apply_rule(
    scores: Sequence[HypothesisScore],
    rule: MosRule,
    n: int,
    k_p: int,
    k_s: int,
    r_used: int,
    r_estimated: bool = False,
) -> ClassificationOutcome:
    """Penalize pre-computed scores with one rule and pick the minimizer."""
    return _apply_kappa(scores, penalty_factor(rule, n, k_p, k_s), r_used, r_estimated)


def estimate_rank(
    window: DataWindow, m_upper: int | None = None, rule: MosRule = BIC
) -> int:
    """Estimate the clutter rank from the pooled Gram spectrum.

    Scores the homogeneous covariance-scaling likelihood at each candidate
    rank 1..m_upper with the given rule's penalty; ties go to the smaller
    rank.  ``m_upper`` defaults to n - 1, the largest identifiable rank.
    """
    n, k_tot = window.n, window.k_p + window.k_s
    if m_upper is None:
        m_upper = n - 1
    if not 1 <= m_upper <= n - 1:
        raise ValueError("rank search bound must lie in 1..n-1")
    z = np.concatenate([window.z_p, window.z_s], axis=1)
    mu = np.clip(np.linalg.eigvalsh(z @ z.conj().T)[::-1], 0.0, None)
    kappa = penalty_factor(rule, n, window.k_p, window.k_s)
    best_r, best_score = 1, np.inf
    for r in range(1, m_upper + 1):
        ll, _, _ = _model2_ll([mu], [float(k_tot)], r, n, k_tot)
        score = -2.0 * float(ll) + kappa * param_count(2, 0, r, n)
        if score < best_score:
            best_r, best_score = r, score
    return best_r


def classify(
    window: DataWindow,
    model: int,
    rule: MosRule,
    r: int | str = "auto",
    n_max: int = 6,
    m_upper: int | None = None,
) -> ClassificationOutcome:
    """Classify one window under the given variation model and selection rule.

    ``r`` may be a known clutter rank or ``"auto"``, in which case the rank is
    first estimated from the pooled spectrum (always with the BIC penalty,
    regardless of the classification rule).
    """
    r_estimated = False
    if isinstance(r, str):
        if r != "auto":
            raise ValueError("rank must be an integer or 'auto'")
        r_used = estimate_rank(window, m_upper=m_upper, rule=BIC)
        r_estimated = True
    else:
        r_used = int(r)
    scores = score_hypotheses(window, model, r_used, n_max=n_max)
    return apply_rule(
        scores, rule, window.n, window.k_p, window.k_s, r_used, r_estimated
    )
