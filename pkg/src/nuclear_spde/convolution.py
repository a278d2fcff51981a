"""Stochastic convolution ``X_t = int_0^t int S(t-r)' R(r,u) M(dr,du)``.

Two constructions are provided: the exact per-mode multiplier scheme, and the
dyadic family ``Y^k`` in which the semigroup time ``t - r`` is replaced by
``t - r(k)`` with ``r(k)`` the dyadic point ``i T / 2^k`` just below ``r``.
The reports check the maximal (Kotelenez-type) inequality and the Cauchy
property of the dyadic family by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ensemble import as_chunks, mean_and_se
from .integral import Integrand, isometry_rhs
from .noise import LevySpec, NoiseIncrements, check_grid
from .semigroup import SpectralSemigroup
from .skeleton import SkeletonPath, run_skeleton

ConvolutionPath = SkeletonPath

_EPS = 1e-9


@dataclass(frozen=True)
class DyadicGrid:
    """Dyadic rounding ``r(k) = i T / 2^k`` for ``r in (i T/2^k, (i+1) T/2^k]``."""

    horizon: float
    level: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.level < 0 or int(self.level) != self.level:
            raise ValueError("level must be a nonnegative integer")

    @property
    def step(self) -> float:
        return self.horizon / 2 ** self.level

    def round_time(self, r) -> np.ndarray:
        """Left-open rounding of exact times (jump times)."""
        x = np.asarray(r, dtype=float) / self.step
        return np.maximum(np.ceil(x - _EPS) - 1.0, 0.0) * self.step

    def round_cell(self, t) -> np.ndarray:
        """Rounding of a grid cell ``(t, t+dt]`` with ``dt`` finer than ``T/2^k``.

        Every point of such a cell rounds to the dyadic point at or below
        its left endpoint.
        """
        x = np.asarray(t, dtype=float) / self.step
        return np.floor(x + _EPS) * self.step

    def lag_time(self, r):
        return np.asarray(r, dtype=float) - self.round_time(r)

    def lag_cell(self, t):
        return float(t) - float(self.round_cell(t))


def convolve_exact(sg: SpectralSemigroup, ig: Integrand, inc: NoiseIncrements,
                   *, martingale_only: bool = False) -> ConvolutionPath:
    """Exact-multiplier convolution: contributions made at ``r`` decay as ``exp(-(t-r) lambda)``."""
    return run_skeleton(inc, ig.basis, ig, decay=sg.eigenvalues,
                        martingale_only=martingale_only, p=ig.p)


def convolve_dyadic(sg: SpectralSemigroup, ig: Integrand, inc: NoiseIncrements,
                    dg: DyadicGrid, *, martingale_only: bool = False) -> ConvolutionPath:
    """``Y^k(t) = int_0^t int S(t - r(k))' R(r,u) M(dr,du)``."""
    if not math.isclose(dg.horizon, inc.horizon, rel_tol=1e-12):
        raise ValueError(f"dyadic horizon {dg.horizon} != noise horizon {inc.horizon}")
    return run_skeleton(inc, ig.basis, ig, decay=sg.eigenvalues, dyadic=dg,
                        martingale_only=martingale_only, p=ig.p)


def max_increment(path: SkeletonPath) -> np.ndarray:
    """Per-path max over consecutive grid points of ``|X(t_{i+1}) - X(t_i)|_{-p}``."""
    from .hermite_space import seminorm
    d = np.diff(path.values, axis=1)
    return np.max(seminorm(path.basis, -path.p, d), axis=1)


class TailCheck(NamedTuple):
    C: float
    tail: float
    bound: float
    se: float
    passed: bool


def _tail_checks(sups: np.ndarray, Cs, quad: float, theta: float, T: float):
    out = []
    n = sups.size
    for C in Cs:
        if not C > 0:
            raise ValueError("threshold C must be positive")
        tail = float(np.mean(sups > C))
        se = math.sqrt(tail * (1 - tail) / n)
        bound = math.exp(2 * theta * T) / C ** 2 * quad
        out.append(TailCheck(float(C), tail, bound, se, tail <= bound + 3 * se))
    return out


def kotelenez_report(sg: SpectralSemigroup, ig: Integrand, spec: LevySpec, grid, C,
                     ensemble) -> list[TailCheck]:
    """Empirical ``P(sup_D |X_t|_{-p} > C)`` against ``e^{2 theta T} / C^2 * E int int ||F||^2``.

    ``D`` is the grid plus the jump times; the martingale part of the noise
    is used (raw large jumps are not covered by the inequality).
    """
    grid = check_grid(grid)
    Cs = np.atleast_1d(np.asarray(C, dtype=float))

    def stat(inc):
        return convolve_exact(sg, ig, inc, martingale_only=True).sup_norm()

    sups = as_chunks(ensemble)(stat)
    quad = isometry_rhs(ig, spec, grid)
    return _tail_checks(sups, Cs, quad, sg.growth_rate, float(grid[-1]))


class DyadicTrend(NamedTuple):
    levels: tuple
    mean_sq_sup: tuple
    se: tuple
    nonincreasing: bool


def dyadic_trend_report(sg: SpectralSemigroup, ig: Integrand, ensemble,
                        levels=range(2, 9)) -> DyadicTrend:
    """Mean-square ``sup_t |Y^k(t) - X_t|_{-p}`` for each level, on shared draws."""
    levels = tuple(int(k) for k in levels)

    def stat(inc):
        exact = convolve_exact(sg, ig, inc)
        cols = [convolve_dyadic(sg, ig, inc, DyadicGrid(inc.horizon, k)).sup_distance(exact)
                for k in levels]
        return np.stack(cols, axis=1) ** 2

    sq = as_chunks(ensemble)(stat)
    stats = [mean_and_se(sq[:, j]) for j in range(len(levels))]
    means = tuple(m for m, _ in stats)
    ok = all(b <= a for a, b in zip(means, means[1:]))
    return DyadicTrend(levels, means, tuple(s for _, s in stats), ok)


class DyadicCauchy(NamedTuple):
    k: int
    m: int
    mean_sq_sup: float
    se: float
    bound_integral: float
    tails: list


def dyadic_cauchy_report(sg: SpectralSemigroup, ig: Integrand, spec: LevySpec, grid,
                         ensemble, k: int, m: int, C_factors=(0.5, 1.0, 2.0)) -> DyadicCauchy:
    """``sup_t |Y^m(t) - Y^k(t)|_{-p}`` against the maximal bound for ``F^{m,k}``.

    ``F^{m,k}(r,u) = (I - S(r(m) - r(k))) R(r,u)``; its squared HS integral
    ``Q`` is computed by the grid quadrature and the tail is tested at
    ``C = c * sqrt(Q)`` for each factor ``c`` (bound ``e^{2 theta T} / c^2``).
    """
    if m < k:
        raise ValueError(f"need m >= k, got k={k}, m={m}")
    grid = check_grid(grid)
    T = float(grid[-1])
    dk, dm = DyadicGrid(T, k), DyadicGrid(T, m)

    def stat(inc):
        if m == k:
            return np.zeros(inc.n_paths)
        yk = convolve_dyadic(sg, ig, inc, dk, martingale_only=True)
        ym = convolve_dyadic(sg, ig, inc, dm, martingale_only=True)
        return ym.sup_distance(yk)

    sups = as_chunks(ensemble)(stat)
    ms, se = mean_and_se(sups ** 2)

    def operator(r):
        gap = float(dm.round_cell(r) - dk.round_cell(r))
        return np.diag(1.0 - np.exp(-gap * sg.eigenvalues))

    quad = isometry_rhs(ig, spec, grid, operator=operator)
    if quad > 0:
        tails = _tail_checks(sups, [c * math.sqrt(quad) for c in C_factors], quad,
                             sg.growth_rate, T)
    else:
        tails = [TailCheck(0.0, float(np.mean(sups > 0)), 0.0, 0.0, bool(np.all(sups == 0)))]
    return DyadicCauchy(k, m, ms, se, quad, tails)


def convolution_moment_target(sg: SpectralSemigroup, ig: Integrand, spec: LevySpec,
                              t: float) -> float:
    """``int_0^t sum_u ||S(t-r) R(r,u)||_HS^2 mu(du) dr`` by adaptive quadrature."""
    from scipy.integrate import quad

    from .integral import hs_norm_sq

    def integrand(r):
        S = np.diag(np.exp(-(t - r) * sg.eigenvalues))
        target = Integrand(lambda rr, u, s: S @ ig(rr, u, s), ig.basis, ig.p)
        return sum(spec.mass(u) * hs_norm_sq(target, spec, r, u)
                   for u in spec.coordinates() if spec.mass(u) > 0)

    breaks = [b for b in spec.wiener.breaks if 0 < b < t]
    val, _ = quad(integrand, 0.0, t, points=breaks or None, limit=200,
                  epsabs=1e-13, epsrel=1e-11)
    return float(val)
