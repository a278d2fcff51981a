"""Cell-by-cell accumulation engine shared by integrals, convolutions and solvers.

A path is advanced over each grid cell ``(t_i, t_{i+1}]`` by

    X_{i+1} = S(dt) [X_i + d_i dt + R_i dW_i] + sum_{tau in cell} S(t_{i+1} - tau) J_tau

where every operator is evaluated at the left endpoint (predictability),
``d_i`` collects drift and compensator rates and ``J_tau = R(tau, u, X_{tau-}) u``
is a jump applied at its exact time.  With ``S`` the identity this is the
Riemann-Ito sum of the stochastic integral; with the spectral semigroup it
is the exact-multiplier convolution, or the exponential Euler step when the
operators depend on the state.

Paths are vectorized over the ensemble; jump events inside a cell are
processed in rounds (the ``n``-th event of every path at once).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hermite_space import SpectralBasis, seminorm
from .noise import NoiseIncrements


class PredictabilityError(RuntimeError):
    """An integrand asked for the state at or after its own evaluation time."""


class NonFiniteOperatorError(FloatingPointError):
    pass


class StateView:
    """Left-limit state handed to integrands.

    ``left`` is the state just before ``time`` (``None`` for deterministic
    integrands).  ``at(s)`` returns the grid state at the last grid time
    ``<= s`` and refuses any ``s >= time``.
    """

    __slots__ = ("time", "left", "rows", "_history", "_grid", "_filled")

    def __init__(self, time, left, rows, history=None, grid=None, filled=0):
        self.time = time
        self.left = left
        self.rows = rows
        self._history = history
        self._grid = grid
        self._filled = filled

    def at(self, s: float) -> np.ndarray:
        if np.any(s >= np.asarray(self.time)):
            raise PredictabilityError(
                f"state requested at t={s}, not strictly before evaluation time")
        if self._history is None:
            raise PredictabilityError("no state path attached to this integration")
        idx = int(np.searchsorted(self._grid, s, side="right")) - 1
        if idx >= self._filled:
            raise PredictabilityError(f"state at t={s} not yet computed")
        return self._history[self.rows, idx]

    def subset(self, mask) -> "StateView":
        time = self.time[mask] if np.ndim(self.time) else self.time
        left = None if self.left is None else self.left[mask]
        return StateView(time, left, self.rows[mask], self._history, self._grid, self._filled)


@dataclass(eq=False)
class SkeletonPath:
    """Simulated paths on the grid plus their jump events.

    ``values[p, i]`` is the (right-continuous) value at ``grid[i]``; events
    carry the left limit, the value after the jump and the jump itself.
    Norms use the dual seminorm ``|.|_{-p}``.
    """

    basis: SpectralBasis
    grid: np.ndarray
    values: np.ndarray
    event_path: np.ndarray
    event_time: np.ndarray
    event_atom: np.ndarray
    event_left: np.ndarray
    event_value: np.ndarray
    event_jump: np.ndarray
    p: float = 0.0
    noise_token: tuple = ()
    blown: np.ndarray = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.blown is None:
            self.blown = np.zeros(self.n_paths, dtype=bool)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def grid_norms(self) -> np.ndarray:
        return seminorm(self.basis, -self.p, self.values)

    def sup_norm(self) -> np.ndarray:
        """Per-path sup of the dual seminorm over grid and jump times."""
        out = np.max(self.grid_norms(), axis=1)
        if self.event_time.size:
            np.maximum.at(out, self.event_path,
                          seminorm(self.basis, -self.p, self.event_value))
        return out

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def __sub__(self, other: "SkeletonPath") -> "SkeletonPath":
        if self.values.shape != other.values.shape or not np.array_equal(
                self.event_time, other.event_time):
            raise ValueError("paths live on different skeletons")
        return SkeletonPath(self.basis, self.grid, self.values - other.values,
                            self.event_path, self.event_time, self.event_atom,
                            self.event_left - other.event_left,
                            self.event_value - other.event_value,
                            self.event_jump - other.event_jump, self.p,
                            self.noise_token, self.blown | other.blown)

    def sup_distance(self, other: "SkeletonPath") -> np.ndarray:
        """Per-path sup over the skeleton of ``|self - other|_{-p}``."""
        return (self - other).sup_norm()

    def path(self, row: int):
        """``(times, values)`` of one path on grid plus jump times, time-sorted."""
        sel = self.event_path == row
        times = np.concatenate([self.grid, self.event_time[sel]])
        vals = np.concatenate([self.values[row], self.event_value[sel]])
        order = np.argsort(times, kind="stable")
        return times[order], vals[order]

    @classmethod
    def constant(cls, like: "SkeletonPath | None", basis, inc: NoiseIncrements, value,
                 *, martingale_only: bool = False, p: float = 0.0) -> "SkeletonPath":
        """A path frozen at ``value`` everywhere; the Picard starting guess."""
        keep = _kept_events(inc, martingale_only)
        P, K, N = inc.n_paths, inc.n_cells, inc.n_modes
        v = np.broadcast_to(np.asarray(value, dtype=float), (P, N))
        vals = np.repeat(v[:, None, :], K + 1, axis=1)
        ev = v[inc.event_path[keep]]
        return cls(basis, inc.grid, vals, inc.event_path[keep], inc.event_time[keep],
                   inc.event_atom[keep], ev.copy(), ev.copy(), np.zeros_like(ev), p,
                   inc.token)


def apply_op(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply one matrix, or one matrix per row, to row vectors."""
    if R.ndim == 2:
        return v @ R.T
    return np.einsum("mij,mj->mi", R, v)


def _kept_events(inc: NoiseIncrements, martingale_only: bool) -> np.ndarray:
    if not martingale_only or not inc.event_time.size:
        return np.arange(inc.event_time.size)
    return np.flatnonzero(inc.spec.in_ball[inc.event_atom - 1])


def _checked(R, where):
    R = np.asarray(R, dtype=float)
    if not np.all(np.isfinite(R)):
        raise NonFiniteOperatorError(f"integrand returned non-finite entries at {where}")
    return R


def run_skeleton(inc: NoiseIncrements, basis: SpectralBasis, op, *, decay=None,
                 drift=None, z0=None, state=None, dyadic=None,
                 martingale_only: bool = False, p: float = 0.0) -> SkeletonPath:
    """Advance all paths of ``inc`` over the grid.

    Parameters
    ----------
    op : callable ``(r, u, view) -> (N, N)`` or ``(M, N, N)``
        Operator acting on noise coordinate ``u`` (0 = Wiener, k = atom k).
    decay : array of eigenvalues, or None for the identity semigroup.
    drift : callable ``(r, g) -> (M, N)`` or None; needs a state.
    state : None, ``"self"`` (use the path being built) or a SkeletonPath
        on the same skeleton whose left limits feed the operators.
    dyadic : object with ``lag_cell(t)`` / ``lag_time(tau)`` giving
        ``t - r(k)``; the contribution made at ``r`` is then damped by
        ``S(r - r(k))`` before the exact flow takes over.
    martingale_only : drop drift, the ``t m`` term and raw (large) jumps.
    """
    spec = inc.spec
    grid = inc.grid
    P, K, N = inc.n_paths, inc.n_cells, inc.n_modes
    if basis.n_modes != N:
        raise ValueError("basis and noise disagree on n_modes")
    lam = None if decay is None else np.asarray(decay, dtype=float)
    if dyadic is not None and lam is None:
        raise ValueError("dyadic rounding needs a semigroup")
    external = state if isinstance(state, SkeletonPath) else None
    if external is not None and external.values.shape != (P, K + 1, N):
        raise ValueError("state path does not match the noise draw")

    # X holds the inhomogeneous part; the flow S(t) z0 is added exactly
    Z = np.zeros((P, N)) if z0 is None else np.array(
        np.broadcast_to(np.asarray(z0, dtype=float), (P, N)))

    def flow(t, rows=slice(None)):
        if z0 is None:
            return 0.0
        if lam is None:
            return Z[rows]
        t = np.asarray(t, dtype=float)
        return np.exp(-t[..., None] * lam) * Z[rows] if t.ndim else np.exp(-t * lam) * Z[rows]

    X = np.zeros((P, N))
    values = np.empty((P, K + 1, N))
    values[:, 0] = Z
    blown = ~np.all(np.isfinite(Z), axis=1)

    keep = _kept_events(inc, martingale_only)
    E = keep.size
    ev_left = np.empty((E, N))
    ev_value = np.empty((E, N))
    ev_jump = np.empty((E, N))
    if external is not None and external.event_time.size != E:
        raise ValueError("state path events do not match the noise draw")
    ev_cell = inc.event_cell[keep]
    ev_pathall = inc.event_path[keep]
    ev_timeall = inc.event_time[keep]
    ev_atomall = inc.event_atom[keep]
    # positions are ordered by (path, time); regroup by cell, stable in path/time
    by_cell = np.argsort(ev_cell, kind="stable")
    bounds = np.searchsorted(ev_cell[by_cell], np.arange(K + 1))

    drift_vec = spec.drift
    use_m = (not martingale_only) and np.any(drift_vec != 0)
    small = [k for k in range(1, spec.n_atoms + 1) if spec.in_ball[k - 1]]
    acc = np.zeros((P, N))
    last = np.zeros(P)
    all_rows = np.arange(P)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(K):
            t0, t1 = grid[i], grid[i + 1]
            dt = t1 - t0
            if state == "self":
                left = X + flow(t0)
            elif external is not None:
                left = external.values[:, i]
            else:
                left = None
            view = StateView(t0, left, all_rows, values, grid, i + 1)
            R0 = _checked(op(t0, 0, view), f"t={t0}, u=0")
            d = np.zeros(N)
            if drift is not None and not martingale_only:
                d = d + np.asarray(drift(t0, left), dtype=float)
            if use_m:
                d = d + R0 @ drift_vec
            for k in small:
                Rk = _checked(op(t0, k, view), f"t={t0}, u={k}")
                d = d - spec.weights[k - 1] * (Rk @ spec.atoms[k - 1])
            incr = d * dt + apply_op(R0, inc.dW[:, i])
            pw = None if dyadic is None else np.exp(-dyadic.lag_cell(t0) * lam)
            if pw is not None:
                incr = incr * pw

            cell_ev = by_cell[bounds[i]:bounds[i + 1]]
            touched = None
            if cell_ev.size:
                pe = ev_pathall[cell_ev]
                start = np.r_[True, pe[1:] != pe[:-1]]
                grp = np.maximum.accumulate(np.where(start, np.arange(pe.size), 0))
                rnd = np.arange(pe.size) - grp
                touched = np.unique(pe)
                last[touched] = t0
                for r in range(int(rnd.max()) + 1):
                    idx = cell_ev[rnd == r]
                    rows = ev_pathall[idx]
                    te = ev_timeall[idx]
                    s = te - t0
                    dr = d if d.ndim == 1 else d[rows]
                    part = dr * s[:, None]
                    if pw is not None:
                        part = part * pw
                    base = X[rows] + part
                    carried = acc[rows]
                    if lam is not None:
                        base = np.exp(-s[:, None] * lam) * base
                        carried = np.exp(-(te - last[rows])[:, None] * lam) * carried
                    lft = base + carried + flow(te, rows)
                    if state == "self":
                        sleft = lft
                    elif external is not None:
                        sleft = external.event_left[idx]
                    else:
                        sleft = None
                    eview = StateView(te, sleft, rows, values, grid, i + 1)
                    J = np.zeros((idx.size, N))
                    atoms = ev_atomall[idx]
                    for k in np.unique(atoms):
                        m = atoms == k
                        Rk = _checked(op(te[m], int(k), eview.subset(m)), f"jump, u={k}")
                        J[m] = Rk @ spec.atoms[k - 1]
                    if dyadic is not None:
                        J = J * np.exp(-dyadic.lag_time(te)[:, None] * lam)
                    ev_left[idx] = lft
                    ev_jump[idx] = J
                    ev_value[idx] = lft + J
                    acc[rows] = carried + J
                    last[rows] = te

            Xn = X + incr
            if lam is not None:
                Xn = np.exp(-dt * lam) * Xn
            if touched is not None:
                carried = acc[touched]
                if lam is not None:
                    carried = np.exp(-(t1 - last[touched])[:, None] * lam) * carried
                Xn[touched] = Xn[touched] + carried
                acc[touched] = 0.0
            bad = ~np.all(np.isfinite(Xn), axis=1)
            if bad.any():
                blown |= bad
                Xn[bad] = np.nan
            X = Xn
            values[:, i + 1] = X + flow(t1)

    return SkeletonPath(basis, grid, values, ev_pathall, ev_timeall, ev_atomall,
                        ev_left, ev_value, ev_jump, p, inc.token, blown)
