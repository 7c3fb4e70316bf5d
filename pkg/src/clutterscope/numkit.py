"""Complex linear-algebra and sampling kernels shared by the classifier stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One round of the SplitMix64 bijection, used to derive substream keys."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by a (seed, stream) key pair.

    The pair fully determines the generated sequence, so Monte Carlo trials
    can be assigned disjoint streams and run in any order (or in parallel)
    while producing bit-identical results.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; calling twice replays the sequence."""
        key = (self.seed & _MASK64, self.stream & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, index: int) -> "RngStream":
        """Derive an independent substream; distinct indices give disjoint keys."""
        if index < 0:
            raise ValueError("child index must be non-negative")
        mixed = _splitmix64((self.stream & _MASK64) ^ _splitmix64(index))
        return RngStream(self.seed, mixed)


@dataclass(frozen=True)
class EigenSystem:
    """Spectral decomposition with eigenvalues sorted in non-increasing order."""

    values: np.ndarray
    vectors: np.ndarray


def hermitian_eig(a: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Parameters
    ----------
    a : (n, n) array_like
        Hermitian matrix; only finiteness is checked, the lower triangle wins.

    Returns
    -------
    EigenSystem
        ``values[0] >= values[1] >= ...`` and ``vectors[:, i]`` is the
        eigenvector paired with ``values[i]``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("hermitian_eig expects a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("hermitian_eig: input contains non-finite entries")
    values, vectors = np.linalg.eigh(a)
    return EigenSystem(values=values[::-1].copy(), vectors=vectors[:, ::-1].copy())


def steering_vector(theta_deg: float, n: int) -> np.ndarray:
    """Unit-norm half-wavelength array steering vector for a plane wave.

    Entry m is ``exp(1j * pi * m * sin(theta)) / sqrt(n)`` for m = 0..n-1.
    """
    if n < 2:
        raise ValueError("steering_vector needs at least two channels")
    phase = np.pi * np.sin(np.deg2rad(theta_deg))
    return np.exp(1j * phase * np.arange(n)) / np.sqrt(n)


def unitary_from_first_column(d: np.ndarray) -> np.ndarray:
    """Deterministic Householder completion of a unit vector to a unitary matrix.

    Returns the unique matrix ``Q = phase * (I - 2 u u^H / u^H u)`` with
    ``Q @ e1 == d``, where ``phase`` aligns the leading entry of ``d`` onto the
    positive real axis and ``u = d / phase - e1``.  ``d = e1`` maps to the
    identity.
    """
    d = np.asarray(d, dtype=complex).reshape(-1)
    n = d.shape[0]
    if n < 1:
        raise ValueError("empty direction vector")
    norm = np.linalg.norm(d)
    if not np.isfinite(norm) or abs(norm - 1.0) > 1e-10:
        raise ValueError("unitary_from_first_column expects a unit-norm vector")
    lead = d[0]
    phase = lead / abs(lead) if abs(lead) > 0 else 1.0 + 0.0j
    aligned = d / phase
    u = aligned.copy()
    u[0] -= 1.0
    uu = np.vdot(u, u).real
    if uu < 1e-30:
        return np.eye(n, dtype=complex) * phase
    q = np.eye(n, dtype=complex) - (2.0 / uu) * np.outer(u, u.conj())
    return phase * q


def sample_snapshots(cov_factor: np.ndarray, count: int, rng: RngStream) -> np.ndarray:
    """Draw zero-mean circular complex Gaussian columns with covariance F F^H.

    Parameters
    ----------
    cov_factor : (n, m) array_like
        Factor F of the desired covariance; rank deficiency is allowed, so
        low-rank clutter covariances need no Cholesky regularization.
    count : int
        Number of snapshot columns to draw.
    rng : RngStream
        Stream key; the same key reproduces the same snapshots bit for bit.
    """
    if count < 1:
        raise ValueError("snapshot count must be positive")
    f = np.asarray(cov_factor, dtype=complex)
    if f.ndim != 2:
        raise ValueError("cov_factor must be a matrix")
    gen = rng.generator()
    real = gen.standard_normal((f.shape[1], count))
    imag = gen.standard_normal((f.shape[1], count))
    return f @ ((real + 1j * imag) / np.sqrt(2.0))
