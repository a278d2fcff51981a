"""Truncated Hermite eigen-system and its weighted seminorm family.

Elements of the nuclear space and of its dual are both carried as plain
coefficient vectors in the orthonormal Hermite basis.  The weight of mode
``j`` for the seminorm indexed by ``r`` is ``(1 + lambda_j) ** r``; a
negative ``r`` gives the dual norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when a coefficient vector does not match the basis."""


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenvalues ``lambda_1 <= ... <= lambda_N`` of the truncated system.

    The default (``SpectralBasis.hermite(N)``) uses ``lambda_j = j - 1/2``,
    the spectrum of ``-d^2/dx^2 + x^2/4`` on the Hermite functions.
    """

    eigenvalues: np.ndarray = field(repr=False)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if lam.size == 0:
            raise ValueError("basis needs at least one mode")
        if not np.all(np.isfinite(lam)):
            raise ValueError("eigenvalues must be finite")
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be nonnegative")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def hermite(cls, n_modes: int) -> "SpectralBasis":
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        return cls(np.arange(1, n_modes + 1) - 0.5)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    def __repr__(self):
        return f"SpectralBasis(n_modes={self.n_modes})"

    def weights(self, r: float) -> np.ndarray:
        """Per-mode weights ``(1 + lambda_j) ** r``."""
        return (1.0 + self.eigenvalues) ** float(r)

    def unit(self, j: int) -> np.ndarray:
        """The 1-based unit coefficient vector ``e_j``."""
        if not 1 <= j <= self.n_modes:
            raise IndexError(f"mode {j} outside 1..{self.n_modes}")
        e = np.zeros(self.n_modes)
        e[j - 1] = 1.0
        return e

    def coeffs(self, values) -> np.ndarray:
        """Validate ``values`` as a coefficient vector (or a stack of them)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.n_modes:
            raise DimensionError(
                f"expected trailing dimension {self.n_modes}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficient vector has non-finite entries")
        return v


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Values ``phi_1(x), ..., phi_{n_max}(x)`` stacked along axis 0.

    Uses the normalized three-term recurrence directly on the functions, so
    the Gaussian factor is carried from the start and nothing overflows for
    moderate ``|x|``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max,) + x.shape)
    out[0] = (2.0 * np.pi) ** -0.25 * np.exp(-0.25 * x * x)
    if n_max > 1:
        out[1] = x * out[0]
    for m in range(1, n_max - 1):
        # phi_{m+2} = (x phi_{m+1} - sqrt(m) phi_m) / sqrt(m + 1)
        out[m + 1] = (x * out[m] - np.sqrt(m) * out[m - 1]) / np.sqrt(m + 1)
    return out


def hermite_function(n: int, x):
    """The ``n``-th Hermite function (1-based), ``phi_n = sqrt(g) h_{n-1}``."""
    if int(n) != n or n < 1:
        raise ValueError(f"Hermite index must be a positive integer, got {n}")
    return hermite_functions(int(n), x)[-1]


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def seminorm(basis: SpectralBasis, r: float, v) -> np.ndarray:
    """``|v|_r = (sum_j (1 + lambda_j)^{2r} v_j^2)^{1/2}`` over the last axis."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != basis.n_modes:
        raise DimensionError(
            f"expected trailing dimension {basis.n_modes}, got shape {v.shape}")
    w = basis.weights(r)
    return np.sqrt(np.sum((w * v) ** 2, axis=-1))


def pairing(f, psi) -> np.ndarray:
    """Dual pairing ``<f, psi>`` as the coordinate dot product."""
    f = np.asarray(f, dtype=float)
    psi = np.asarray(psi, dtype=float)
    _check_pair(f, psi)
    return np.sum(f * psi, axis=-1)


def hs_partial_sums(basis: SpectralBasis, gap: float) -> np.ndarray:
    """Cumulative sums of ``(1 + lambda_j)^{-2 gap}`` for j = 1..N."""
    return np.cumsum(basis.weights(-2.0 * gap))


def hs_embedding_norm(basis: SpectralBasis, r1: float, r2: float) -> float:
    """Hilbert-Schmidt norm of the truncated inclusion ``Psi_{r2} -> Psi_{r1}``."""
    if not r2 > r1:
        raise ValueError(f"need r2 > r1 for the inclusion, got r1={r1}, r2={r2}")
    return float(np.sqrt(hs_partial_sums(basis, r2 - r1)[-1]))
