"""Scenario synthesis for reference-window classification experiments.

Builds the low-rank clutter covariance shared by all scenarios, lays out the
secondary window into covariance segments for each hypothesis, and draws the
primary/secondary snapshot matrices.  Windows round-trip through a small JSON
format so the CLI can generate data in one process and classify it in another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .numkit import EigenSystem, RngStream, hermitian_eig, sample_snapshots, steering_vector

PRIMARY = "primary"
ALT1 = "alt1"
ALT2 = "alt2"

#: Number of hypotheses per variation model (index 0 is the homogeneous case).
HYPOTHESIS_COUNT = {1: 4, 2: 5}

# Fixed substream indices so every draw inside a window has its own key.
_CHILD_PRIMARY = 0
_CHILD_GAMMA_ALT1 = 1
_CHILD_GAMMA_ALT2 = 2
_CHILD_SEGMENT_BASE = 10


@dataclass(frozen=True)
class ClutterBasis:
    """Angles and powers that define the rank-r primary clutter covariance."""

    angles_deg: tuple[float, ...]
    n_channels: int
    cnr_db: float = 30.0
    noise_power: float = 1.0

    def __post_init__(self) -> None:
        angles = tuple(float(a) for a in self.angles_deg)
        object.__setattr__(self, "angles_deg", angles)
        if not 1 <= len(angles) < self.n_channels:
            raise ValueError("need 1 <= number of angles < number of channels")
        if len(set(angles)) != len(angles):
            raise ValueError("clutter angles must be distinct")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")

    @property
    def rank(self) -> int:
        return len(self.angles_deg)

    @property
    def clutter_power(self) -> float:
        """Per-direction clutter power implied by the clutter-to-noise ratio."""
        return self.noise_power * 10.0 ** (self.cnr_db / 10.0)


@lru_cache(maxsize=64)
def _clutter_products(basis: ClutterBasis) -> tuple[np.ndarray, EigenSystem]:
    vs = np.stack([steering_vector(a, basis.n_channels) for a in basis.angles_deg], axis=1)
    m = basis.clutter_power * (vs @ vs.conj().T)
    m = 0.5 * (m + m.conj().T)
    return m, hermitian_eig(m)


def build_primary_clutter(basis: ClutterBasis) -> tuple[np.ndarray, EigenSystem]:
    """Primary clutter covariance (sum of equal-power steering dyads) and its eigensystem.

    The returned arrays are cached per basis and must be treated as read-only.
    """
    return _clutter_products(basis)


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete description of one synthetic reference-window scenario.

    ``model`` selects how secondary clutter deviates from the primary: model 1
    rescales each clutter eigenvalue by an independent random profile, model 2
    rescales the whole clutter covariance.  ``hypothesis`` picks homogeneous
    (0), fully heterogeneous (1), or the clutter-edge layouts (2+), with
    ``edges`` giving the 1-based positions required by the chosen hypothesis.
    """

    model: int
    hypothesis: int
    k_p: int
    k_s: int
    basis: ClutterBasis
    edges: tuple[int, ...] = ()
    cpr_db: float = 10.0
    alpha: float = 1.0
    beta: float = 1.0
    alt_angles_deg: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(int(e) for e in self.edges))
        if self.alt_angles_deg is not None:
            object.__setattr__(
                self, "alt_angles_deg", tuple(float(a) for a in self.alt_angles_deg)
            )
        if self.model not in HYPOTHESIS_COUNT:
            raise ValueError("model must be 1 or 2")
        if not 0 <= self.hypothesis < HYPOTHESIS_COUNT[self.model]:
            raise ValueError("hypothesis index out of range for this model")
        r = self.basis.rank
        if self.k_s % 2 != 0:
            raise ValueError("secondary window size must be even")
        if self.k_p <= r or self.k_s <= r:
            raise ValueError("window sizes must exceed the clutter rank")
        if self.hypothesis >= 2 and self.k_s < 2 * r:
            raise ValueError("edge hypotheses need k_s >= 2 * rank")
        self._check_edges()
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("power-ratio scale factors must be positive")
        if self.alt_angles_deg is not None:
            if self.model != 2:
                raise ValueError("alternate angle sets apply to model 2 only")
            if len(self.alt_angles_deg) != r:
                raise ValueError("alternate angle set must preserve the clutter rank")
            if len(set(self.alt_angles_deg)) != r:
                raise ValueError("alternate angles must be distinct")

    def _check_edges(self) -> None:
        r, ks = self.basis.rank, self.k_s
        arity = edge_arity(self.model, self.hypothesis)
        if len(self.edges) != arity:
            raise ValueError(f"hypothesis needs exactly {arity} edge(s)")
        if arity == 1:
            (k1,) = self.edges
            if not r <= k1 <= ks - r:
                raise ValueError("single edge must lie in [rank, k_s - rank]")
        elif arity == 2:
            k2, k3 = self.edges
            if not r <= k2 <= ks // 2:
                raise ValueError("first edge must lie in [rank, k_s / 2]")
            if not ks // 2 + 1 <= k3 <= ks - r:
                raise ValueError("second edge must lie in [k_s / 2 + 1, k_s - rank]")

    @property
    def r(self) -> int:
        return self.basis.rank

    @property
    def n(self) -> int:
        return self.basis.n_channels


def edge_arity(model: int, hypothesis: int) -> int:
    """Number of edge positions the hypothesis carries."""
    if hypothesis in (0, 1):
        return 0
    if hypothesis == 3:
        return 2
    return 1  # single-edge layouts: hypothesis 2, and model-2 hypothesis 4


@dataclass(frozen=True)
class Segment:
    """Contiguous run of secondary bins (1-based, inclusive) with one covariance tag."""

    start: int
    end: int
    tag: str

    @property
    def count(self) -> int:
        return self.end - self.start + 1


def segment_layout(spec: ScenarioSpec) -> list[Segment]:
    """Partition of secondary bins 1..k_s into covariance segments.

    For the single-edge hypotheses the side containing more than half of the
    window keeps the primary covariance; the remainder is perturbed.  For the
    double-edge hypothesis the middle block keeps the primary covariance, and
    the outer blocks are perturbed independently.
    """
    ks, hyp = spec.k_s, spec.hypothesis
    if hyp == 0:
        return [Segment(1, ks, PRIMARY)]
    if hyp == 1:
        return [Segment(1, ks, ALT1)]
    if hyp == 2:
        (k1,) = spec.edges
        if k1 > ks // 2:
            return [Segment(1, k1, PRIMARY), Segment(k1 + 1, ks, ALT1)]
        return [Segment(1, k1, ALT1), Segment(k1 + 1, ks, PRIMARY)]
    if hyp == 3:
        k2, k3 = spec.edges
        return [Segment(1, k2, ALT1), Segment(k2 + 1, k3, PRIMARY), Segment(k3 + 1, ks, ALT2)]
    (k4,) = spec.edges  # model-2 hypothesis 4: two perturbed blocks, no primary part
    return [Segment(1, k4, ALT1), Segment(k4 + 1, ks, ALT2)]


def draw_gamma_profile(delta: float, r: int, rng: RngStream) -> np.ndarray:
    """Random non-increasing eigenvalue scale profile for one perturbed segment.

    Draws ``r`` uniform variates, sorts them in descending order and scales by
    ``10 ** delta``, so every entry lies in (0, 10**delta).
    """
    if r < 1:
        raise ValueError("profile length must be positive")
    u = rng.generator().uniform(np.finfo(float).tiny, 1.0, size=r)
    u.sort()
    return (10.0 ** delta) * u[::-1]


def alt_power_ratio(spec: ScenarioSpec, tag: str) -> float:
    """Model-2 clutter power of a perturbed segment relative to the primary."""
    if spec.model != 2:
        raise ValueError("power ratios are a model-2 notion")
    ratio = 10.0 ** (spec.cpr_db / 10.0)
    if tag == ALT1:
        return ratio
    if tag != ALT2:
        raise ValueError("tag must name a perturbed segment")
    if spec.hypothesis == 3:
        return spec.beta * ratio
    if spec.hypothesis == 4:
        return 1.5 * ratio
    raise ValueError("this hypothesis has no second perturbed segment")


def alt_clutter_profile(
    spec: ScenarioSpec, tag: str, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenbasis and eigenvalue profile of one perturbed segment's clutter covariance.

    Returns ``(u, eigs)`` with clutter covariance ``u @ diag(eigs) @ u^H``.
    Model 1 keeps the primary eigenvectors and rescales the leading ``r``
    eigenvalues by a random profile drawn from ``rng`` (the products are kept
    in draw order, not re-sorted).  Model 2 rescales the whole covariance, or
    rebuilds it on an alternate angle set when one is configured.
    """
    _, eig = build_primary_clutter(spec.basis)
    lam = np.clip(eig.values, 0.0, None)
    r = spec.r
    if spec.model == 1:
        if tag == ALT1:
            delta = spec.cpr_db / 10.0
            child = rng.child(_CHILD_GAMMA_ALT1)
        elif tag == ALT2:
            if spec.hypothesis != 3:
                raise ValueError("this hypothesis has no second perturbed segment")
            delta = spec.alpha * spec.cpr_db / 10.0
            child = rng.child(_CHILD_GAMMA_ALT2)
        else:
            raise ValueError("tag must name a perturbed segment")
        profile = lam.copy()
        profile[:r] = draw_gamma_profile(delta, r, child) * lam[:r]
        return eig.vectors, profile
    ratio = alt_power_ratio(spec, tag)
    if spec.alt_angles_deg is None:
        return eig.vectors, ratio * lam
    alt_basis = ClutterBasis(
        angles_deg=spec.alt_angles_deg,
        n_channels=spec.n,
        cnr_db=spec.basis.cnr_db + 10.0 * np.log10(ratio),
        noise_power=spec.basis.noise_power,
    )
    _, alt_eig = build_primary_clutter(alt_basis)
    return alt_eig.vectors, np.clip(alt_eig.values, 0.0, None)


@dataclass(frozen=True)
class DataWindow:
    """Primary and secondary snapshot matrices, plus the generating truth if known."""

    z_p: np.ndarray
    z_s: np.ndarray
    truth: ScenarioSpec | None = None

    @property
    def n(self) -> int:
        return self.z_p.shape[0]

    @property
    def k_p(self) -> int:
        return self.z_p.shape[1]

    @property
    def k_s(self) -> int:
        return self.z_s.shape[1]


def _factor(vectors: np.ndarray, clutter_eigs: np.ndarray, noise_power: float) -> np.ndarray:
    return vectors * np.sqrt(noise_power + clutter_eigs)


def synthesize_window(spec: ScenarioSpec, rng: RngStream) -> DataWindow:
    """Draw one reference window under the given scenario.

    Every random draw (primary snapshots, per-segment profiles and snapshots)
    uses its own substream of ``rng``, so a fixed stream reproduces the same
    window regardless of evaluation order elsewhere.
    """
    _, eig = build_primary_clutter(spec.basis)
    lam = np.clip(eig.values, 0.0, None)
    noise = spec.basis.noise_power
    f_primary = _factor(eig.vectors, lam, noise)
    z_p = sample_snapshots(f_primary, spec.k_p, rng.child(_CHILD_PRIMARY))

    factors = {PRIMARY: f_primary}
    layout = segment_layout(spec)
    for tag in (ALT1, ALT2):
        if any(seg.tag == tag for seg in layout):
            vectors, profile = alt_clutter_profile(spec, tag, rng)
            factors[tag] = _factor(vectors, profile, noise)

    z_s = np.empty((spec.n, spec.k_s), dtype=complex)
    for index, seg in enumerate(layout):
        block = sample_snapshots(
            factors[seg.tag], seg.count, rng.child(_CHILD_SEGMENT_BASE + index)
        )
        z_s[:, seg.start - 1 : seg.end] = block
    return DataWindow(z_p=z_p, z_s=z_s, truth=spec)


# ---------------------------------------------------------------------------
# JSON window format


def _matrix_to_lists(z: np.ndarray) -> list:
    # column-major: one list per snapshot, entries as [re, im] pairs
    return [[[float(v.real), float(v.imag)] for v in z[:, k]] for k in range(z.shape[1])]


def _matrix_from_lists(data: list, n: int, count: int, name: str) -> np.ndarray:
    if not isinstance(data, list) or len(data) != count:
        raise ValueError(f"{name}: expected {count} snapshots")
    z = np.empty((n, count), dtype=complex)
    for k, snap in enumerate(data):
        if not isinstance(snap, list) or len(snap) != n:
            raise ValueError(f"{name}: snapshot {k} must list {n} [re, im] pairs")
        for i, pair in enumerate(snap):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ValueError(f"{name}: entry ({i}, {k}) is not an [re, im] pair")
            z[i, k] = complex(float(pair[0]), float(pair[1]))
    return z


def spec_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "model": spec.model,
        "hypothesis": spec.hypothesis,
        "k_p": spec.k_p,
        "k_s": spec.k_s,
        "edges": list(spec.edges),
        "cpr_db": spec.cpr_db,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "angles_deg": list(spec.basis.angles_deg),
        "n_channels": spec.basis.n_channels,
        "cnr_db": spec.basis.cnr_db,
        "noise_power": spec.basis.noise_power,
        "alt_angles_deg": None
        if spec.alt_angles_deg is None
        else list(spec.alt_angles_deg),
    }


def spec_from_dict(data: dict) -> ScenarioSpec:
    basis = ClutterBasis(
        angles_deg=tuple(data["angles_deg"]),
        n_channels=int(data["n_channels"]),
        cnr_db=float(data["cnr_db"]),
        noise_power=float(data["noise_power"]),
    )
    alt = data.get("alt_angles_deg")
    return ScenarioSpec(
        model=int(data["model"]),
        hypothesis=int(data["hypothesis"]),
        k_p=int(data["k_p"]),
        k_s=int(data["k_s"]),
        basis=basis,
        edges=tuple(data.get("edges", ())),
        cpr_db=float(data.get("cpr_db", 10.0)),
        alpha=float(data.get("alpha", 1.0)),
        beta=float(data.get("beta", 1.0)),
        alt_angles_deg=None if alt is None else tuple(alt),
    )


def window_to_dict(window: DataWindow) -> dict:
    return {
        "n": window.n,
        "kp": window.k_p,
        "ks": window.k_s,
        "zp": _matrix_to_lists(window.z_p),
        "zs": _matrix_to_lists(window.z_s),
        "truth": None if window.truth is None else spec_to_dict(window.truth),
    }


def window_from_dict(data: dict) -> DataWindow:
    if not isinstance(data, dict):
        raise ValueError("window document must be a JSON object")
    try:
        n, kp, ks = int(data["n"]), int(data["kp"]), int(data["ks"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"window document missing integer dimensions: {exc}") from exc
    if n < 2 or kp < 1 or ks < 1:
        raise ValueError("window dimensions out of range")
    z_p = _matrix_from_lists(data["zp"], n, kp, "zp")
    z_s = _matrix_from_lists(data["zs"], n, ks, "zs")
    truth = data.get("truth")
    spec = None if truth is None else spec_from_dict(truth)
    return DataWindow(z_p=z_p, z_s=z_s, truth=spec)


def save_window(window: DataWindow, path: str | Path) -> None:
    Path(path).write_text(json.dumps(window_to_dict(window)) + "\n")


def load_window(path: str | Path) -> DataWindow:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed window file: {exc}") from exc
    return window_from_dict(data)
