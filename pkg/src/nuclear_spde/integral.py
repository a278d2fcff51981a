"""Strong stochastic integral of operator-valued integrands and its isometry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .ensemble import Ensemble, as_chunks, mean_and_se
from .hermite_space import SpectralBasis, seminorm
from .noise import WIENER_MARKER, LevySpec, NoiseIncrements, check_grid
from .skeleton import SkeletonPath, run_skeleton


@dataclass(frozen=True, eq=False)
class Integrand:
    """Predictable operator family ``(r, u, state) -> N x N`` matrix.

    ``fn`` receives the evaluation time ``r`` (a float on the grid, an array
    at jump times), the noise coordinate ``u`` and a
    :class:`~nuclear_spde.skeleton.StateView` (or ``None``).  It returns
    one matrix or a stack of matrices, one per row of ``r``/``state``.
    Values live in the dual Hilbert space of ``|.|_p``.
    """

    fn: Callable
    basis: SpectralBasis
    p: float = 0.0
    state_dependent: bool = False
    name: str = "custom"

    def __call__(self, r, u, state=None) -> np.ndarray:
        R = np.asarray(self.fn(r, u, state), dtype=float)
        n = self.basis.n_modes
        if R.shape[-2:] != (n, n):
            raise ValueError(f"integrand {self.name} returned shape {R.shape}, "
                             f"expected (..., {n}, {n})")
        return R

    @classmethod
    def constant(cls, basis, matrix, p=0.0, name="constant"):
        M = np.array(matrix, dtype=float)
        M.setflags(write=False)
        return cls(lambda r, u, s: M, basis, p, name=name)

    @classmethod
    def zero(cls, basis, p=0.0):
        return cls.constant(basis, np.zeros((basis.n_modes,) * 2), p, "zero")

    @classmethod
    def identity(cls, basis, p=0.0):
        return cls.constant(basis, np.eye(basis.n_modes), p, "identity")

    @classmethod
    def diagonal(cls, basis, diag, p=0.0):
        return cls.constant(basis, np.diag(np.asarray(diag, dtype=float)), p, "diagonal")

    @classmethod
    def time_scaled(cls, basis, matrix=None, p=0.0):
        """``R(r) = r * matrix`` (identity by default)."""
        M = np.eye(basis.n_modes) if matrix is None else np.array(matrix, dtype=float)

        def fn(r, u, s):
            return np.multiply.outer(np.asarray(r, dtype=float), M)
        return cls(fn, basis, p, name="time_scaled")

    def combine(self, a: float, other: "Integrand", b: float) -> "Integrand":
        """``a * self + b * other`` on the same basis and target seminorm."""
        if other.basis.n_modes != self.basis.n_modes or other.p != self.p:
            raise ValueError("integrands differ in basis or target seminorm")
        return Integrand(lambda r, u, s: a * self(r, u, s) + b * other(r, u, s),
                         self.basis, self.p, self.state_dependent or other.state_dependent,
                         f"{a}*{self.name}+{b}*{other.name}")


def hs_norm_sq(ig: Integrand, spec: LevySpec, r: float, u, basis=None, p=None,
               state=None) -> float:
    """Squared Hilbert-Schmidt norm of ``R(r, u)`` from the ``q_{r,u}``-dual space.

    For the Wiener marker the orthonormal basis of that space is
    ``sqrt(q_j) e_j``, giving ``sum_j q_j(r) |R e_j|_{-p}^2``.  For an atom the
    space is the line through ``u`` with ``u`` of unit norm, giving
    ``|R u|_{-p}^2``.
    """
    basis = ig.basis if basis is None else basis
    p = ig.p if p is None else p
    u = spec.check_coordinate(u)
    R = ig(r, u, state)
    w = basis.weights(-p)
    if u == WIENER_MARKER:
        cols = np.sum((w[:, None] * R) ** 2, axis=-2)
        return float(np.sum(spec.wiener.rates(r) * cols))
    return float(seminorm(basis, -p, R @ spec.atoms[u - 1]) ** 2)


def isometry_rhs(ig: Integrand, spec: LevySpec, grid, horizon: float | None = None,
                 operator=None) -> float:
    """Left-endpoint quadrature of ``int_0^t sum_u ||R(r,u)||_HS^2 mu(du) dr``.

    ``operator(r)``, if given, pre-multiplies the integrand (used for the
    dyadic difference family).  Only the compensated (martingale) atoms carry
    mass.
    """
    if ig.state_dependent:
        raise ValueError("quadrature side of the isometry needs a deterministic integrand")
    grid = check_grid(grid)
    if horizon is not None:
        grid = grid[grid <= horizon + 1e-15]
    total = 0.0
    for t0, t1 in zip(grid[:-1], grid[1:]):
        step = 0.0
        for u in spec.coordinates():
            mass = spec.mass(u)
            if mass == 0.0:
                continue
            if operator is None:
                target = ig
            else:
                M = operator(t0)
                target = Integrand(lambda r, uu, s, M=M: M @ ig(r, uu, s), ig.basis, ig.p)
            step += mass * hs_norm_sq(target, spec, t0, u)
        total += step * (t1 - t0)
    return total


def integrate(ig: Integrand, inc: NoiseIncrements, state_path: SkeletonPath | None = None,
              *, martingale_only: bool = False) -> SkeletonPath:
    """Path of ``int_0^t int R(r,u) M(dr,du)`` on the grid-plus-jumps skeleton.

    Wiener part as left-endpoint Riemann-Ito sums, compensated jumps as exact
    jumps minus a left-endpoint compensator, raw jumps uncompensated.  The
    drift ``t m`` of the Levy noise is integrated with the Wiener operator.
    """
    if ig.state_dependent and state_path is None:
        raise ValueError(f"integrand {ig.name} needs a state path")
    if state_path is not None and state_path.noise_token != inc.token:
        raise ValueError("state path was simulated on a different noise draw")
    return run_skeleton(inc, ig.basis, ig, state=state_path,
                        martingale_only=martingale_only, p=ig.p)


class IsometryReport(NamedTuple):
    lhs: float
    rhs: float
    z_score: float
    se: float
    n_paths: int


def z_score(estimate: float, target: float, se: float) -> float:
    diff = estimate - target
    if se == 0.0:
        return 0.0 if abs(diff) <= 1e-15 * max(1.0, abs(target)) else float("inf")
    return diff / se


def ito_isometry_report(ig: Integrand, spec: LevySpec, grid, ensemble) -> IsometryReport:
    """Monte-Carlo ``E |int int R dM|_{-p}^2`` at the horizon vs its quadrature."""
    grid = check_grid(grid)
    src = ensemble.spec if isinstance(ensemble, Ensemble) else ensemble.spec
    if src.digest() != spec.digest():
        raise ValueError("ensemble was simulated with a different noise spec")

    def stat(inc):
        path = integrate(ig, inc, martingale_only=True)
        return seminorm(ig.basis, -ig.p, path.terminal()) ** 2

    sq = as_chunks(ensemble)(stat)
    lhs, se = mean_and_se(sq)
    rhs = isometry_rhs(ig, spec, grid)
    return IsometryReport(lhs, rhs, z_score(lhs, rhs, se), se, sq.size)
