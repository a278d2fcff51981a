"""Mild solutions of ``dX = (A'X + B(t,X)) dt + int F(t,u,X) M(dt,du)``.

Coefficients come in a small expression form: mode-wise affine drift plus a
table of scalar nonlinearities, and a diagonal (optionally state-linear)
diffusion shared by all noise coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .hermite_space import SpectralBasis, pairing, seminorm
from .noise import LevySpec, NoiseIncrements
from .rng import INITIAL, path_generator
from .semigroup import SpectralSemigroup
from .skeleton import SkeletonPath, run_skeleton

SolutionPath = SkeletonPath


class NoiseMismatchError(ValueError):
    pass


class NonContractionError(RuntimeError):
    pass


class CoefficientError(ValueError):
    """Coefficients failed the sampled growth/Lipschitz validation."""


_NONLINEAR = {
    # kind: (function, sup |f|, Lipschitz constant) for unit amplitude
    "sin": (np.sin, 1.0, 1.0),
    "tanh": (np.tanh, 1.0, 1.0),
    "cube": (lambda x: x ** 3, np.inf, np.inf),
}


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    """Drift ``B(r, g)``, diffusion ``F(r, u, g)`` and growth functions ``a, b``.

    ``drift`` maps ``(r, g)`` with ``g`` of shape ``(M, N)`` to ``(M, N)``;
    ``diffusion`` returns ``(N, N)`` or ``(M, N, N)``; ``a`` and ``b`` map
    ``(psi, r)`` to nonnegative reals.
    """

    drift: Callable
    diffusion: Callable
    a: Callable
    b: Callable
    basis: SpectralBasis
    state_dependent_diffusion: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)


def affine_coefficients(basis: SpectralBasis, noise: LevySpec, *, kappa=0.0, const=0.0,
                        nonlinear=(), diffusion=1.0, diffusion_linear=0.0,
                        name="affine") -> CoefficientSpec:
    """Expression-form coefficients.

    ``B(r, g)_j = -kappa_j g_j + const_j + sum amp * f(g_mode)`` over the
    ``nonlinear`` table of ``(mode, kind, amplitude)`` rows (kinds ``sin``,
    ``tanh``, ``cube``), and ``F(r, u, g) = diag(diffusion_j + diffusion_linear_j g_j)``
    for every coordinate ``u``.

    The growth functions are the bounds that hold for test vectors along a
    single Hermite mode; they are not claimed for arbitrary test vectors.
    """
    n = basis.n_modes
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (n,)).copy()
    const = np.broadcast_to(np.asarray(const, dtype=float), (n,)).copy()
    f0 = np.broadcast_to(np.asarray(diffusion, dtype=float), (n,)).copy()
    f1 = np.broadcast_to(np.asarray(diffusion_linear, dtype=float), (n,)).copy()
    table = []
    sup_nl = np.zeros(n)
    lip_nl = np.zeros(n)
    for mode, kind, amp in nonlinear:
        if kind not in _NONLINEAR:
            raise CoefficientError(f"unknown nonlinearity {kind!r}")
        if not 1 <= mode <= n:
            raise CoefficientError(f"nonlinearity mode {mode} outside 1..{n}")
        fn, sup, lip = _NONLINEAR[kind]
        table.append((mode - 1, fn, float(amp)))
        # cube: declared with its value at |g| = 1; sampling exposes the violation
        sup_nl[mode - 1] += abs(amp) * (sup if np.isfinite(sup) else 1.0)
        lip_nl[mode - 1] += abs(amp) * (lip if np.isfinite(lip) else 3.0)

    def drift(r, g):
        g = np.asarray(g, dtype=float)
        out = -kappa * g + const
        for j, fn, amp in table:
            out[..., j] = out[..., j] + amp * fn(g[..., j])
        return out

    diag0 = np.diag(f0)
    linear = bool(np.any(f1 != 0))

    def diff(r, u, g):
        if not linear:
            return diag0
        g = np.asarray(g, dtype=float)
        out = np.zeros(g.shape[:-1] + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = f0 + f1 * g
        return out

    kap = noise.wiener.q.max(axis=0) + np.sum(
        noise.weights[:, None] * noise.atoms ** 2, axis=0)

    def a(psi, r):
        psi = np.asarray(psi, dtype=float)
        supp = psi != 0
        if not supp.any():
            return 0.0
        return float(np.max((np.abs(kappa) + lip_nl)[supp])
                     + np.sum(np.abs(psi) * (np.abs(const) + sup_nl)))

    def b(psi, r):
        psi = np.asarray(psi, dtype=float)
        supp = psi != 0
        if not supp.any():
            return 0.0
        k = float(np.max(kap[supp]))
        growth = np.sqrt(k) * max(float(np.sum(np.abs(psi * f0))), float(np.max(np.abs(f1[supp]))))
        lip = k * float(np.max(f1[supp] ** 2))
        return float(max(growth, lip))

    params = dict(kappa=kappa.tolist(), const=const.tolist(), diffusion=f0.tolist(),
                  diffusion_linear=f1.tolist(),
                  nonlinear=[list(row) for row in nonlinear])
    return CoefficientSpec(drift, diff, a, b, basis, linear, name, params)


class ValidationResult(NamedTuple):
    ok: bool
    n_samples: int
    failures: list


def _noise_energy(spec: LevySpec, coeff: CoefficientSpec, r, g, psi):
    """``sum_u q_{r,u}(F(r,u,g)' psi)^2 mu(u)`` for one sample."""
    total = 0.0
    for u in spec.coordinates():
        mass = spec.mass(u, compensated_only=False)
        F = np.asarray(coeff.diffusion(r, u, g[None, :]), dtype=float).reshape(
            coeff.basis.n_modes, coeff.basis.n_modes)
        Fpsi = F.T @ psi
        if u == 0:
            total += float(np.sum(spec.wiener.rates(r) * Fpsi ** 2))
        else:
            total += mass * float(pairing(spec.atoms[u - 1], Fpsi)) ** 2
    return total


def validate_coefficients(coeff: CoefficientSpec, spec: LevySpec, horizon: float, *,
                          n_samples: int = 200, seed: int = 0, psi_dist: str = "basis",
                          g_scale: float = 3.0, rtol: float = 1e-9) -> ValidationResult:
    """Check growth and Lipschitz conditions at randomly drawn points.

    ``psi_dist`` is ``"basis"`` (scaled unit vectors, the Hermite modes) or
    ``"gaussian"`` (dense random test vectors).
    """
    rng = np.random.default_rng(seed)
    n = coeff.basis.n_modes
    failures = []
    for s in range(n_samples):
        r = float(rng.uniform(0.0, horizon))
        g1, g2 = g_scale * rng.standard_normal((2, n)) * np.exp(rng.uniform(-2, 2, (2, 1)))
        if psi_dist == "basis":
            psi = np.zeros(n)
            psi[rng.integers(n)] = rng.choice([-1.0, 1.0]) * np.exp(rng.uniform(-2, 2))
        elif psi_dist == "gaussian":
            psi = rng.standard_normal(n)
        else:
            raise ValueError(f"unknown psi distribution {psi_dist!r}")
        a, b = coeff.a(psi, r), coeff.b(psi, r)
        if not (np.isfinite(a) and np.isfinite(b)):
            failures.append(("integrability", r, "a or b not finite"))
            continue
        B1 = coeff.drift(r, g1[None, :])[0]
        B2 = coeff.drift(r, g2[None, :])[0]
        p1, p2 = float(pairing(g1, psi)), float(pairing(g2, psi))
        lhs = abs(float(pairing(B1, psi)))
        if lhs > a * (1 + abs(p1)) * (1 + rtol):
            failures.append(("growth B", r, f"{lhs:.4g} > {a * (1 + abs(p1)):.4g}"))
        e1 = _noise_energy(spec, coeff, r, g1, psi)
        if e1 > b ** 2 * (1 + abs(p1)) ** 2 * (1 + rtol):
            failures.append(("growth F", r, f"{e1:.4g} > {b ** 2 * (1 + abs(p1)) ** 2:.4g}"))
        lhs = abs(float(pairing(B1 - B2, psi)))
        if lhs > a * abs(p1 - p2) * (1 + rtol) + 1e-300:
            failures.append(("Lipschitz B", r, f"{lhs:.4g} > {a * abs(p1 - p2):.4g}"))
        diffcoef = CoefficientSpec(coeff.drift,
                                   lambda rr, u, g: (np.asarray(coeff.diffusion(rr, u, g1[None]))
                                                     - np.asarray(coeff.diffusion(rr, u, g2[None]))),
                                   coeff.a, coeff.b, coeff.basis)
        ed = _noise_energy(spec, diffcoef, r, g1, psi)
        if ed > b * (p1 - p2) ** 2 * (1 + rtol) + 1e-300:
            failures.append(("Lipschitz F", r, f"{ed:.4g} > {b * (p1 - p2) ** 2:.4g}"))
    return ValidationResult(not failures, n_samples, failures)


def sample_initial(mean, std, seed: int, n_paths: int, first_path: int = 0) -> np.ndarray:
    """Per-path Gaussian initial conditions ``mean + std * Z``, one stream per path."""
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    if not np.any(std):
        return np.broadcast_to(mean, (n_paths,) + mean.shape).copy()
    z = np.stack([path_generator(seed, first_path + i, INITIAL).standard_normal(mean.size)
                  for i in range(n_paths)])
    return mean + std * z


def _run(sg, coeff, z0, inc, state, p):
    def op(r, u, view):
        return coeff.diffusion(r, u, view.left)
    return run_skeleton(inc, coeff.basis, op, decay=sg.eigenvalues, drift=coeff.drift,
                        z0=z0, state=state, p=p)


def _path_distance(x: SkeletonPath, y: SkeletonPath) -> float:
    d = x.sup_distance(y)
    if not np.all(np.isfinite(d)):
        return float("inf")
    return float(np.max(d))


def solve_mild(sg: SpectralSemigroup, coeff: CoefficientSpec, z0, inc: NoiseIncrements,
               scheme: str = "exponential_euler", *, iters: int = 30, tol: float = 1e-10,
               rho: float = 0.0, initial: SkeletonPath | None = None) -> SolutionPath:
    """Solve the mild equation on the noise skeleton.

    ``exponential_euler`` advances
    ``X_{t+dt} = S(dt)[X_t + B(t,X_t) dt + F(t,.,X_t) dM]`` with jumps applied
    at their exact times from the left-limit state.  ``picard`` iterates the
    discrete mild map on whole paths, starting from the constant-``z0``
    path (or ``initial``), until successive iterates are within ``tol`` in
    ``sup_t |.|_{-rho}`` or ``iters`` rounds have run.

    Paths that become non-finite are kept as NaN and flagged in ``blown``.
    """
    if sg.basis.n_modes != coeff.basis.n_modes:
        raise ValueError("semigroup and coefficients use different bases")
    z0 = np.asarray(z0, dtype=float)
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial condition must be finite")
    if scheme == "exponential_euler":
        path = _run(sg, coeff, z0, inc, "self", rho)
        path.flags.update(scheme=scheme, blown=int(path.blown.sum()))
        return path
    if scheme != "picard":
        raise ValueError(f"unknown scheme {scheme!r}")

    current = initial if initial is not None else SkeletonPath.constant(
        None, coeff.basis, inc, z0, p=rho)
    distances = []
    converged = non_contractive = False
    for _ in range(iters):
        nxt = _run(sg, coeff, z0, inc, current, rho)
        dist = _path_distance(nxt, current)
        distances.append(dist)
        current = nxt
        if dist < tol:
            converged = True
            break
        if not np.isfinite(dist) or (len(distances) >= 3
                                     and distances[-1] > distances[-2] > distances[-3]):
            non_contractive = True
            break
    current.flags.update(scheme=scheme, iterations=len(distances), distances=distances,
                         converged=converged, non_contractive=non_contractive,
                         blown=int(current.blown.sum()))
    return current


def weak_residual(path: SolutionPath, sg: SpectralSemigroup, coeff: CoefficientSpec,
                  inc: NoiseIncrements, psi, *, per_path: bool = False):
    """RMS over grid times of the weak-form defect tested against ``psi``.

    ``<X_t, psi> - <X_0, psi> - int_0^t <X_r, A psi> + <B(r, X_r), psi> dr
    - int_0^t int <F(r,u,X_r) dM, psi>`` with left-endpoint quadrature and
    the stochastic term built from the same noise draw.
    """
    if path.noise_token != inc.token:
        raise NoiseMismatchError("solution path and increments come from different draws")
    psi = coeff.basis.coeffs(psi)
    spec = inc.spec
    X = path.values
    P, K1, N = X.shape
    dt = np.diff(inc.grid)
    Apsi = sg.generator_apply(psi)
    incr = np.zeros((P, K1 - 1))
    small = [k for k in spec.coordinates() if k and spec.in_ball[k - 1]]
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(K1 - 1):
            t0, g = inc.grid[i], X[:, i]
            det = pairing(g, Apsi) + pairing(coeff.drift(t0, g), psi)
            F0 = np.asarray(coeff.diffusion(t0, 0, g))
            dM = inc.dW[:, i] + spec.drift * dt[i]
            sto = pairing(_apply(F0, dM), psi)
            for k in small:
                Fk = np.asarray(coeff.diffusion(t0, k, g))
                sto = sto - spec.weights[k - 1] * dt[i] * pairing(Fk @ spec.atoms[k - 1], psi)
            incr[:, i] = det * dt[i] + sto
        if path.event_time.size:
            jumps = np.zeros_like(incr)
            for k in np.unique(path.event_atom):
                m = path.event_atom == k
                Fk = np.asarray(coeff.diffusion(path.event_time[m], int(k), path.event_left[m]))
                contrib = pairing(Fk @ spec.atoms[k - 1], psi)
                cells = np.clip(np.searchsorted(inc.grid, path.event_time[m], side="left") - 1,
                                0, K1 - 2)
                np.add.at(jumps, (path.event_path[m], cells), contrib)
            incr = incr + jumps
        lhs = pairing(X, psi)
        rhs = lhs[:, :1] + np.concatenate([np.zeros((P, 1)), np.cumsum(incr, axis=1)], axis=1)
        defect = (lhs - rhs)[:, 1:]
    ok = ~path.blown
    per = np.sqrt(np.mean(defect ** 2, axis=1))
    if per_path:
        return np.where(ok, per, np.nan)
    return float(np.sqrt(np.mean(defect[ok] ** 2)))


def _apply(F, v):
    if F.ndim == 2:
        return v @ F.T
    return np.einsum("mij,mj->mi", F, v)


def uniqueness_probe(sg: SpectralSemigroup, coeff: CoefficientSpec, z0, inc: NoiseIncrements,
                     *, iters: int = 30, tol: float = 1e-10, rho: float = 0.0) -> float:
    """Sup distance between Picard solutions started from ``z0`` and from zero."""
    first = solve_mild(sg, coeff, z0, inc, "picard", iters=iters, tol=tol, rho=rho)
    zero = SkeletonPath.constant(None, coeff.basis, inc, np.zeros(coeff.basis.n_modes), p=rho)
    second = solve_mild(sg, coeff, z0, inc, "picard", iters=iters, tol=tol, rho=rho,
                        initial=zero)
    for run in (first, second):
        if run.flags["non_contractive"]:
            raise NonContractionError(
                f"Picard iteration not contracting: distances {run.flags['distances'][-4:]}")
    return _path_distance(first, second)


def jump_inheritance_defect(path: SolutionPath, coeff: CoefficientSpec,
                            inc: NoiseIncrements) -> float:
    """Max deviation between recorded jumps and ``F(tau, u, X_{tau-}) u``.

    Also requires the path's jump times to be exactly the noise jump times.
    """
    if not np.array_equal(path.event_time, inc.event_time):
        return float("inf")
    worst = 0.0
    for k in np.unique(path.event_atom):
        m = path.event_atom == k
        F = np.asarray(coeff.diffusion(path.event_time[m], int(k), path.event_left[m]))
        expect = F @ inc.spec.atoms[k - 1]
        worst = max(worst, float(np.max(np.abs(path.event_jump[m] - expect))))
    return worst


def moment_profile(path: SolutionPath) -> np.ndarray:
    """Sample ``E |X_t|_{-rho}^2`` at each grid time over non-blown paths."""
    ok = ~path.blown
    return np.mean(seminorm(path.basis, -path.p, path.values[ok]) ** 2, axis=0)
