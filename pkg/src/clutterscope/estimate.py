"""Closed-form and iterative ML estimators feeding the scenario classifier.

The eigenvalue-rescaling model has no closed-form ML estimate for the
per-direction scale factors, so those are fitted by cyclic coordinate ascent
on the compressed likelihood.  Everything here is written to run either on a
single problem or on a batch of problems that share the primary-window
estimates, because the edge hypotheses re-fit the scales for every candidate
edge position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import unitary_from_first_column

#: Relative floor applied to the noise-power estimate, against zero trailing eigensums.
SIGMA2_FLOOR_EPS = 1e-12

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0
_COARSE_FRACTIONS = np.geomspace(1e-8, 1.0, 33)
_GOLDEN_ITERS = 42
_NEWTON_ITERS = 3


@dataclass(frozen=True)
class PrimaryEstimates:
    """Noise power and clutter eigenvalue estimates from the primary window."""

    sigma2: float
    lambdas: np.ndarray
    degenerate: bool = False


def _floored_sigma2(
    trailing_sum: float, denom: float, trace_total: float, count_total: int, n: int
) -> tuple[float, bool]:
    if trace_total <= 0.0:
        raise ValueError("all-zero data: noise power is unidentifiable")
    floor = SIGMA2_FLOOR_EPS * trace_total / (count_total * n)
    sigma2 = trailing_sum / denom
    if sigma2 < floor:
        return floor, True
    return sigma2, False


def primary_noise_and_eigs(z_p: np.ndarray, r: int) -> PrimaryEstimates:
    """ML noise power and top-r clutter eigenvalues from primary data alone.

    The noise estimate averages the trailing Gram eigenvalues; each clutter
    eigenvalue is the corresponding leading Gram eigenvalue over the snapshot
    count, noise-corrected and clamped at zero.
    """
    z = np.asarray(z_p, dtype=complex)
    n, k_p = z.shape
    if not 1 <= r < n:
        raise ValueError("rank must satisfy 1 <= r < n")
    if k_p <= r:
        raise ValueError("primary window must hold more snapshots than the rank")
    mu = np.linalg.eigvalsh(z @ z.conj().T)[::-1]
    mu = np.clip(mu, 0.0, None)
    sigma2, degenerate = _floored_sigma2(
        float(mu[r:].sum()), k_p * (n - r), float(mu.sum()), k_p, n
    )
    lambdas = np.clip(mu[:r] / k_p - sigma2, 0.0, None)
    return PrimaryEstimates(sigma2=sigma2, lambdas=lambdas, degenerate=degenerate)


@dataclass(frozen=True)
class SubspaceEstimate:
    """Common unitary basis whose first column tracks the dominant snapshot direction."""

    u_hat: np.ndarray


def subspace_estimate(z_p: np.ndarray, z_s: np.ndarray) -> SubspaceEstimate:
    """Basis that minimizes the total deviation of unit snapshots from its first column.

    Normalizes every snapshot in both windows, sums them, and completes the
    normalized resultant to a unitary matrix.  Fails when a snapshot has zero
    norm or when the unit snapshots cancel to (numerically) nothing.
    """
    snaps = np.concatenate([np.asarray(z_p, complex), np.asarray(z_s, complex)], axis=1)
    norms = np.linalg.norm(snaps, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm snapshot has no direction")
    resultant = (snaps / norms).sum(axis=1)
    scale = np.linalg.norm(resultant)
    if scale < 1e-12:
        raise ValueError("degenerate geometry: unit snapshots cancel")
    return SubspaceEstimate(u_hat=unitary_from_first_column(resultant / scale))


@dataclass(frozen=True)
class GammaEstimate:
    """Fitted per-direction scale factors with the ascent diagnostics."""

    gammas: np.ndarray
    iterations_used: int
    objective_trace: np.ndarray
    no_clutter: bool = False


def _suffix_sums(tau: np.ndarray) -> np.ndarray:
    return np.cumsum(tau[:, ::-1], axis=1)[:, ::-1]


def _objective(tau: np.ndarray, s: np.ndarray, k_eff: np.ndarray, sigma2: float,
               lam: np.ndarray) -> np.ndarray:
    c = sigma2 + _suffix_sums(tau) * lam
    return -(k_eff[:, None] * np.log(c) + s / c).sum(axis=1)


def _coord_argmax(h: int, tau: np.ndarray, s: np.ndarray, k_eff: np.ndarray,
                  sigma2: float, lam: np.ndarray) -> np.ndarray:
    """Exact-ish maximizer of the single-increment slice, batched over rows.

    Only directions i <= h with a positive eigenvalue estimate contribute
    anything non-constant, so the slice reduces to a sum of m concave-ish
    terms in the increment t >= 0.  The search brackets the maximizer with an
    analytic upper bound, scans a coarse geometric grid, refines by golden
    section, and polishes with a guarded Newton step; the previous value and
    the boundary t = 0 always stay in the candidate set, so a sweep can never
    decrease the objective.
    """
    b = tau.shape[0]
    active = np.flatnonzero(lam[: h + 1] > 0.0)
    if active.size == 0:
        return np.zeros(b)
    lam_a = lam[active]
    s_a = s[:, active]
    base = _suffix_sums(tau)[:, active] - tau[:, [h]]
    k = k_eff[:, None]

    def val(t: np.ndarray) -> np.ndarray:
        c = sigma2 + (base + t[:, None]) * lam_a
        return -(k * np.log(c) + s_a / c).sum(axis=1)

    # Beyond this point every term of the derivative is negative.
    upper = ((s_a / k - sigma2) / lam_a - base).max(axis=1)
    upper = np.clip(upper, 0.0, None)
    searchable = upper > 0.0
    if not searchable.any():
        zero = np.zeros(b)
        old = tau[:, h]
        return np.where(val(zero) >= val(old), zero, old)

    # Coarse scan over 0 plus geometric fractions of the upper bound.
    grid = np.concatenate(
        [np.zeros((b, 1)), upper[:, None] * _COARSE_FRACTIONS], axis=1
    )
    c = sigma2 + (base[:, None, :] + grid[:, :, None]) * lam_a
    grid_vals = -(k[:, :, None] * np.log(c) + s_a[:, None, :] / c).sum(axis=2)
    best = np.argmax(grid_vals, axis=1)
    lo = np.take_along_axis(grid, np.maximum(best - 1, 0)[:, None], axis=1)[:, 0]
    hi_idx = np.minimum(best + 1, grid.shape[1] - 1)
    hi = np.take_along_axis(grid, hi_idx[:, None], axis=1)[:, 0]

    a_end, b_end = lo.copy(), hi.copy()
    x1 = b_end - _INV_PHI * (b_end - a_end)
    x2 = a_end + _INV_PHI * (b_end - a_end)
    f1, f2 = val(x1), val(x2)
    for _ in range(_GOLDEN_ITERS):
        left = f1 >= f2
        b_end = np.where(left, x2, b_end)
        a_end = np.where(left, a_end, x1)
        x_new = np.where(
            left, b_end - _INV_PHI * (b_end - a_end), a_end + _INV_PHI * (b_end - a_end)
        )
        f_new = val(x_new)
        x1, x2 = np.where(left, x_new, x2), np.where(left, x1, x_new)
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
    t_ref = np.where(f1 >= f2, x1, x2)

    f_ref = val(t_ref)
    for _ in range(_NEWTON_ITERS):
        c = sigma2 + (base + t_ref[:, None]) * lam_a
        fp = (lam_a * (s_a - k * c) / c**2).sum(axis=1)
        fpp = (lam_a**2 * (k * c - 2.0 * s_a) / c**3).sum(axis=1)
        ok = fpp < 0.0
        step = np.where(ok, fp / np.where(ok, fpp, 1.0), 0.0)
        t_try = np.clip(t_ref - step, lo, hi)
        f_try = val(t_try)
        improve = f_try >= f_ref
        t_ref = np.where(improve, t_try, t_ref)
        f_ref = np.where(improve, f_try, f_ref)

    candidates = np.stack([np.zeros(b), tau[:, h], t_ref])
    values = np.stack([val(candidates[0]), val(candidates[1]), f_ref])
    pick = np.argmax(values, axis=0)
    return np.take_along_axis(candidates, pick[None, :], axis=0)[0]


def fit_gamma_profiles(
    s_diags: np.ndarray,
    k_effs: np.ndarray,
    est: PrimaryEstimates,
    n_max: int = 6,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cyclic-ascent scale fits for a batch of problems sharing primary estimates.

    Parameters
    ----------
    s_diags : (b, r) array
        Leading diagonal entries of each problem's projected Gram matrix.
    k_effs : (b,) array
        Snapshot count behind each diagonal.
    est : PrimaryEstimates
        Shared noise power and clutter eigenvalues.
    n_max : int
        Number of full coordinate sweeps; the fit always runs all of them.

    Returns
    -------
    gammas : (b, r) array, objective_trace : (b, n_max + 1) array, no_clutter : bool
        The trace holds the initial objective followed by one value per sweep.
        When every clutter eigenvalue is zero the scales are identically one
        and ``no_clutter`` is set.
    """
    s = np.atleast_2d(np.asarray(s_diags, dtype=float))
    k_eff = np.asarray(k_effs, dtype=float).reshape(-1)
    lam = np.asarray(est.lambdas, dtype=float)
    sigma2 = float(est.sigma2)
    b, r = s.shape
    if lam.shape != (r,):
        raise ValueError("diagonal length must match the number of eigenvalues")
    if k_eff.shape != (b,) or np.any(k_eff < 1):
        raise ValueError("each problem needs a positive snapshot count")
    if np.any(s < 0):
        raise ValueError("projected powers must be non-negative")
    if n_max < 1:
        raise ValueError("need at least one sweep")

    trace = np.empty((b, n_max + 1))
    if not np.any(lam > 0.0):
        psi = -(k_eff * r * np.log(sigma2) + s.sum(axis=1) / sigma2)
        trace[:] = psi[:, None]
        return np.ones((b, r)), trace, True

    tau = np.zeros((b, r))
    tau[:, -1] = 1.0  # start from a flat all-ones scale profile
    trace[:, 0] = _objective(tau, s, k_eff, sigma2, lam)
    for sweep in range(1, n_max + 1):
        for h in range(r):
            tau[:, h] = _coord_argmax(h, tau, s, k_eff, sigma2, lam)
        trace[:, sweep] = _objective(tau, s, k_eff, sigma2, lam)
    return _suffix_sums(tau), trace, False


def cyclic_gamma_fit(
    s_diag: np.ndarray, est: PrimaryEstimates, k_eff: float, n_max: int = 6
) -> GammaEstimate:
    """Fit one non-increasing scale profile to one projected-power diagonal."""
    gammas, trace, no_clutter = fit_gamma_profiles(
        np.asarray(s_diag, dtype=float)[None, :], np.array([k_eff]), est, n_max
    )
    return GammaEstimate(
        gammas=gammas[0],
        iterations_used=0 if no_clutter else n_max,
        objective_trace=trace[0],
        no_clutter=no_clutter,
    )


def coordinate_update(
    h: int,
    taus: np.ndarray,
    s_diag: np.ndarray,
    est: PrimaryEstimates,
    k_eff: float,
) -> float:
    """Optimal value of the h-th (1-based) scale increment, others held fixed.

    Returns 0.0 when the slice has no positive stationary point.
    """
    taus = np.asarray(taus, dtype=float)
    r = taus.shape[0]
    if not 1 <= h <= r:
        raise ValueError("coordinate index must lie in 1..r")
    new = _coord_argmax(
        h - 1,
        taus[None, :].copy(),
        np.asarray(s_diag, dtype=float)[None, :],
        np.array([float(k_eff)]),
        float(est.sigma2),
        np.asarray(est.lambdas, dtype=float),
    )
    return float(new[0])


@dataclass(frozen=True)
class Model2SegmentEstimates:
    """Joint noise power and per-segment clutter eigenvalues for covariance-scaling fits."""

    sigma2: float
    lambda_sets: tuple[np.ndarray, ...]
    degenerate: bool = False


def model2_segment_mles(
    grams: Sequence[tuple[np.ndarray, int]], r: int
) -> Model2SegmentEstimates:
    """Closed-form ML estimates for independently scaled segments.

    Parameters
    ----------
    grams : sequence of (gram, count)
        Per-segment snapshot Gram matrices with their snapshot counts.
    r : int
        Shared clutter rank.

    The noise power pools every segment's trailing eigenvalues; each segment
    then gets its own noise-corrected, clamped leading eigenvalues.
    """
    if not grams:
        raise ValueError("need at least one segment")
    mus = []
    counts = []
    n = None
    for gram, count in grams:
        gram = np.asarray(gram, dtype=complex)
        if n is None:
            n = gram.shape[0]
            if not 1 <= r < n:
                raise ValueError("rank must satisfy 1 <= r < n")
        if gram.shape != (n, n):
            raise ValueError("segment Gram matrices must share one dimension")
        if count < 1:
            raise ValueError("segment snapshot counts must be positive")
        mus.append(np.clip(np.linalg.eigvalsh(gram)[::-1], 0.0, None))
        counts.append(int(count))
    total = sum(counts)
    trailing = sum(float(mu[r:].sum()) for mu in mus)
    trace_total = sum(float(mu.sum()) for mu in mus)
    sigma2, degenerate = _floored_sigma2(trailing, total * (n - r), trace_total, total, n)
    lambda_sets = tuple(
        np.clip(mu[:r] / count - sigma2, 0.0, None) for mu, count in zip(mus, counts)
    )
    return Model2SegmentEstimates(sigma2=sigma2, lambda_sets=lambda_sets, degenerate=degenerate)
