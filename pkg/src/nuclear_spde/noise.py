"""Generalized Wiener and finite-activity Levy noise on the Hermite modes.

The martingale-valued measure is indexed by a coordinate ``u``: ``u = 0`` is
the Wiener marker and ``u = k >= 1`` is the ``k``-th jump atom.  The
intensity measure puts mass 1 on the Wiener marker and mass ``w_k`` on atom
``k``.  Atoms inside the small-jump ball are compensated, atoms outside it
enter as raw (uncompensated) Poisson jumps.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .hermite_space import SpectralBasis, pairing, seminorm
from .rng import JUMPS, WIENER, check_seed, path_generator

WIENER_MARKER = 0


class NoiseError(ValueError):
    pass


def check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).reshape(-1)
    if g.size < 2:
        raise NoiseError("time grid needs at least two points")
    if g[0] != 0.0:
        raise NoiseError("time grid must start at 0")
    if not np.all(np.diff(g) > 0):
        raise NoiseError("time grid must be strictly increasing")
    return g


def uniform_grid(horizon: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise NoiseError("grid steps must be >= 1")
    return np.linspace(0.0, float(horizon), int(steps) + 1)


@dataclass(frozen=True, eq=False)
class WienerSpec:
    """Diagonal covariance ``q_j(r)``, piecewise constant in time.

    Row ``m`` of ``q`` holds the per-mode rates on ``[breaks[m], breaks[m+1])``;
    the last row extends to infinity.
    """

    q: np.ndarray
    breaks: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        b = np.asarray(self.breaks, dtype=float).reshape(-1)
        if b.size != q.shape[0]:
            raise NoiseError("need one covariance row per breakpoint")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise NoiseError("covariance breakpoints must start at 0 and increase")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise NoiseError("covariance rates must be finite and nonnegative")
        q.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "breaks", b)

    @classmethod
    def constant(cls, q) -> "WienerSpec":
        return cls(np.asarray(q, dtype=float)[None, :])

    @property
    def n_modes(self) -> int:
        return self.q.shape[1]

    def rates(self, r) -> np.ndarray:
        """``q_j(r)``; scalar or array ``r``, modes last."""
        idx = np.searchsorted(self.breaks, np.asarray(r, dtype=float), side="right") - 1
        return self.q[np.maximum(idx, 0)]

    def integral(self, s, t) -> np.ndarray:
        """``int_s^t q_j(r) dr`` elementwise over broadcast ``s, t``."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        ends = np.append(self.breaks[1:], np.inf)
        lo = np.maximum(s[..., None], self.breaks)
        hi = np.minimum(t[..., None], ends)
        span = np.clip(hi - lo, 0.0, None)
        return span @ self.q

    def form(self, r: float, phi, phi2=None) -> np.ndarray:
        """Bilinear form ``q_r(phi, phi2) = sum_j q_j(r) phi_j phi2_j``."""
        phi2 = phi if phi2 is None else phi2
        return np.sum(self.rates(r) * np.asarray(phi) * np.asarray(phi2), axis=-1)


@dataclass(frozen=True, eq=False)
class LevySpec:
    """Drift, Wiener part and a finite atomic Levy measure.

    ``atoms[k-1]`` is the jump vector of coordinate ``k`` and ``weights[k-1]``
    its Poisson intensity.  The ball separating compensated from raw jumps is
    measured in the dual seminorm of index ``radius_index``.
    """

    wiener: WienerSpec
    drift: np.ndarray = None
    atoms: np.ndarray = None
    weights: np.ndarray = None
    small_jump_radius: float = 1.0
    radius_index: float = 0.0
    basis: SpectralBasis | None = None

    def __post_init__(self):
        n = self.wiener.n_modes
        drift = np.zeros(n) if self.drift is None else np.asarray(self.drift, dtype=float)
        atoms = (np.zeros((0, n)) if self.atoms is None
                 else np.asarray(self.atoms, dtype=float).reshape(-1, n))
        weights = (np.zeros(0) if self.weights is None
                   else np.asarray(self.weights, dtype=float).reshape(-1))
        if drift.shape != (n,) or not np.all(np.isfinite(drift)):
            raise NoiseError(f"drift must be a finite vector of length {n}")
        if atoms.shape[0] != weights.size:
            raise NoiseError("need one weight per jump atom")
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
            raise NoiseError("jump atoms and weights must be finite")
        if np.any(weights <= 0):
            raise NoiseError("jump weights must be positive (finite activity)")
        if np.any(np.all(atoms == 0, axis=1)):
            raise NoiseError("jump atoms must be nonzero vectors")
        if not self.small_jump_radius > 0:
            raise NoiseError("small_jump_radius must be positive")
        if self.basis is not None and self.basis.n_modes != n:
            raise NoiseError("basis and covariance disagree on n_modes")
        for a in (drift, atoms, weights):
            a.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if atoms.size and np.max(weights * self.atom_norms ** 2) > 1e8:
            warnings.warn("jump atoms with very large second moment; the boundedness "
                          "of q_{r,u} on [0,T] x U is only nominal", stacklevel=2)

    @classmethod
    def from_wiener(cls, wiener: WienerSpec) -> "LevySpec":
        return cls(wiener=wiener)

    @property
    def n_modes(self) -> int:
        return self.wiener.n_modes

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    @property
    def atom_norms(self) -> np.ndarray:
        """Dual seminorms of the atoms used for the ball test."""
        if self.basis is None:
            return np.sqrt(np.sum(self.atoms ** 2, axis=1))
        return seminorm(self.basis, -self.radius_index, self.atoms)

    @property
    def in_ball(self) -> np.ndarray:
        return self.atom_norms <= self.small_jump_radius

    def coordinates(self):
        """All coordinates ``u``: the Wiener marker followed by the atoms."""
        return range(self.n_atoms + 1)

    def mass(self, u: int, *, compensated_only: bool = True) -> float:
        """Intensity-measure weight of coordinate ``u``."""
        u = self.check_coordinate(u)
        if u == WIENER_MARKER:
            return 1.0
        if compensated_only and not self.in_ball[u - 1]:
            return 0.0
        return float(self.weights[u - 1])

    def check_coordinate(self, u) -> int:
        if isinstance(u, (int, np.integer)):
            if 0 <= u <= self.n_atoms:
                return int(u)
            raise NoiseError(f"coordinate {u} not in 0..{self.n_atoms}")
        u = np.asarray(u, dtype=float)
        if u.shape == (self.n_modes,):
            if not np.any(u):
                return WIENER_MARKER
            hits = np.flatnonzero(np.all(self.atoms == u, axis=1))
            if hits.size:
                return int(hits[0]) + 1
        raise NoiseError("coordinate is neither the Wiener marker nor an atom of the spec")

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.wiener.q, self.wiener.breaks, self.drift, self.atoms, self.weights):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.small_jump_radius, self.radius_index)).encode())
        if self.basis is not None:
            h.update(self.basis.eigenvalues.tobytes())
        return h.hexdigest()[:16]


def qru_seminorm(spec: LevySpec, r: float, u, phi) -> np.ndarray:
    """``q_{r,0}(phi) = q_r(phi, phi)^{1/2}`` and ``q_{r,u}(phi) = |<u, phi>|``."""
    u = spec.check_coordinate(u)
    phi = np.asarray(phi, dtype=float)
    if u == WIENER_MARKER:
        return np.sqrt(spec.wiener.form(r, phi))
    return np.abs(pairing(spec.atoms[u - 1], phi))


@dataclass(eq=False)
class NoiseIncrements:
    """Sampled noise for paths ``first_path .. first_path + n_paths - 1``.

    ``dW[p, i]`` is the Wiener increment over ``(grid[i], grid[i+1]]``.
    Jump events are flat arrays sorted by ``(path, time)``; ``event_path`` is
    the row index into this block (0-based), ``event_atom`` the 1-based
    coordinate, and ``event_cell`` the grid cell ``i`` with
    ``grid[i] < time <= grid[i+1]``.
    """

    spec: LevySpec
    grid: np.ndarray
    dW: np.ndarray
    event_path: np.ndarray
    event_time: np.ndarray
    event_atom: np.ndarray
    seed: int = 0
    first_path: int = 0
    event_cell: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grid = check_grid(self.grid)
        self.event_cell = np.clip(
            np.searchsorted(self.grid, self.event_time, side="left") - 1,
            0, self.n_cells - 1)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def n_cells(self) -> int:
        return self.grid.size - 1

    @property
    def n_modes(self) -> int:
        return self.dW.shape[2]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def token(self) -> tuple:
        """Identity of the draw: who sampled which paths on which grid."""
        return (self.spec.digest(), self.seed, self.first_path, self.n_paths,
                hashlib.sha256(self.grid.tobytes()).hexdigest()[:16])

    def jump_counts(self) -> np.ndarray:
        """Per-path, per-atom jump counts, shape ``(n_paths, n_atoms)``."""
        out = np.zeros((self.n_paths, self.spec.n_atoms), dtype=np.int64)
        np.add.at(out, (self.event_path, self.event_atom - 1), 1)
        return out

    def wiener_path(self) -> np.ndarray:
        """``W`` at the grid, shape ``(n_paths, K+1, N)``."""
        out = np.zeros((self.n_paths, self.n_cells + 1, self.n_modes))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def jump_component(self, times, path: int, atom: int) -> np.ndarray:
        """One atom's jump part at ``times`` for one path.

        ``count(t) u - w t u`` for compensated atoms, ``count(t) u`` for raw
        ones; between jumps it is affine in ``t`` by construction.
        """
        times = np.asarray(times, dtype=float)
        sel = (self.event_path == path) & (self.event_atom == atom)
        jt = self.event_time[sel]
        count = np.searchsorted(jt, times, side="right").astype(float)
        u = self.spec.atoms[atom - 1]
        w = self.spec.weights[atom - 1] if self.spec.in_ball[atom - 1] else 0.0
        return count[:, None] * u - (w * times)[:, None] * u

    def levy_at_grid(self, *, raw: bool = True, drift: bool = True) -> np.ndarray:
        """The driving process at the grid, ``(n_paths, K+1, N)``.

        ``t m + W_t + compensated small jumps + raw large jumps``; the flags
        drop the non-martingale parts.
        """
        out = self.wiener_path()
        t = self.grid
        if drift:
            out += t[None, :, None] * self.spec.drift
        for k in range(1, self.spec.n_atoms + 1):
            small = self.spec.in_ball[k - 1]
            if not (small or raw):
                continue
            u = self.spec.atoms[k - 1]
            sel = self.event_atom == k
            counts = np.zeros((self.n_paths, t.size))
            # a jump at tau is seen by every grid time >= tau
            first = np.searchsorted(t, self.event_time[sel], side="left")
            np.add.at(counts, (self.event_path[sel], first), 1.0)
            counts = np.cumsum(counts, axis=1)
            out += counts[..., None] * u
            if small:
                out -= (self.spec.weights[k - 1] * t)[None, :, None] * u
        return out

    def martingale_at_grid(self) -> np.ndarray:
        """Wiener plus compensated jumps at the grid."""
        return self.levy_at_grid(raw=False, drift=False)

    def select(self, rows) -> "NoiseIncrements":
        """A contiguous block of rows as its own increments object."""
        rows = np.arange(self.n_paths)[rows]
        if rows.size and np.any(np.diff(rows) != 1):
            raise NoiseError("select needs a contiguous block of paths")
        lo = int(rows[0]) if rows.size else 0
        sel = np.isin(self.event_path, rows)
        return NoiseIncrements(self.spec, self.grid, self.dW[rows],
                               self.event_path[sel] - lo, self.event_time[sel],
                               self.event_atom[sel], self.seed, self.first_path + lo)

    def coarsen(self, factor: int) -> "NoiseIncrements":
        """Same draw on a grid keeping every ``factor``-th point."""
        if self.n_cells % factor:
            raise NoiseError(f"{self.n_cells} cells not divisible by {factor}")
        k = self.n_cells // factor
        dW = self.dW.reshape(self.n_paths, k, factor, self.n_modes).sum(axis=2)
        return NoiseIncrements(self.spec, self.grid[::factor], dW, self.event_path,
                               self.event_time, self.event_atom, self.seed,
                               self.first_path)


def _draw_path(spec: LevySpec, grid: np.ndarray, seed: int, path: int,
               n_draw: int, sd: np.ndarray):
    K = grid.size - 1
    N = spec.n_modes
    dw = np.zeros((K, N))
    if n_draw:
        z = path_generator(seed, path, WIENER).standard_normal(n_draw * K)
        # mode-major: modes 1..j consume the same draws whatever N is
        dw[:, :n_draw] = z.reshape(n_draw, K).T * sd[:, :n_draw]
    times, atoms = [], []
    if spec.n_atoms:
        T = grid[-1]
        g = path_generator(seed, path, JUMPS)
        for k, w in enumerate(spec.weights, start=1):
            n = int(g.poisson(w * T))
            if n:
                # 1 - U lies in (0, 1], so times lie in (0, T]
                times.append(np.sort(T * (1.0 - g.random(n))))
                atoms.append(np.full(n, k))
    return dw, times, atoms


def sample_levy(spec: LevySpec, grid, seed: int, n_paths: int = 1,
                first_path: int = 0) -> NoiseIncrements:
    """Sample the drift-free parts (Wiener and jumps) for a block of paths.

    The drift ``t m`` and the compensator are deterministic and are added
    by whoever consumes the increments.
    """
    grid = check_grid(grid)
    seed = check_seed(seed)
    if n_paths < 1:
        raise NoiseError("n_paths must be >= 1")
    var = spec.wiener.integral(grid[:-1], grid[1:])
    active = np.flatnonzero(np.any(var > 0, axis=0))
    n_draw = int(active[-1]) + 1 if active.size else 0
    sd = np.sqrt(var)
    dW = np.empty((n_paths, grid.size - 1, spec.n_modes))
    ep, et, ea = [], [], []
    for row in range(n_paths):
        dw, times, atoms = _draw_path(spec, grid, seed, first_path + row, n_draw, sd)
        dW[row] = dw
        if times:
            t = np.concatenate(times)
            a = np.concatenate(atoms)
            order = np.argsort(t, kind="stable")
            et.append(t[order])
            ea.append(a[order])
            ep.append(np.full(t.size, row))
    cat = (lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dtype=dt))
    return NoiseIncrements(spec, grid, dW, cat(ep, np.int64), cat(et, float),
                           cat(ea, np.int64), seed, first_path)


def sample_wiener(spec: WienerSpec, grid, seed: int, n_paths: int = 1,
                  first_path: int = 0) -> NoiseIncrements:
    return sample_levy(LevySpec.from_wiener(spec), grid, seed, n_paths, first_path)
