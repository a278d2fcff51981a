"""Diagonal semigroup ``S(t) = sum_j exp(-t lambda_j) <., phi_j> phi_j``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hermite_space import SpectralBasis, seminorm


@dataclass(frozen=True)
class SpectralSemigroup:
    """Semigroup generated by ``A = -sum_j lambda_j <., phi_j> phi_j``.

    The operator is self-adjoint, so the same multipliers act on dual
    coefficient vectors.  ``growth_rate`` is the exponent ``theta`` in
    ``p(S(t) v) <= exp(theta t) p(v)``; zero for the default spectrum.
    """

    basis: SpectralBasis
    growth_rate: float = 0.0

    def __post_init__(self):
        if not self.growth_rate >= 0:
            raise ValueError("growth_rate must be nonnegative")

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.basis.eigenvalues

    def multipliers(self, t) -> np.ndarray:
        """``exp(-t lambda_j)``; ``t`` may be an array, modes go last."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("semigroup time must be nonnegative")
        return np.exp(-t[..., None] * self.eigenvalues)

    def apply(self, t, v) -> np.ndarray:
        v = self.basis.coeffs(v)
        return self.multipliers(t) * v

    def generator_apply(self, v) -> np.ndarray:
        v = self.basis.coeffs(v)
        return -self.eigenvalues * v

    def exp_bound_margin(self, t: float, r: float, v) -> np.ndarray:
        """``exp(theta t) |v|_r - |S(t) v|_r``; nonnegative up to roundoff."""
        v = self.basis.coeffs(v)
        return (np.exp(self.growth_rate * t) * seminorm(self.basis, r, v)
                - seminorm(self.basis, r, self.apply(t, v)))
