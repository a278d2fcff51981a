"""Scenario files: a versioned YAML schema, validation and model construction.

A scenario names a Hermite truncation, a noise model, an integrand and/or a
set of SEE coefficients, a grid, an ensemble and the checks to run.  Omitted
sections fall back to the defaults of the models below.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .hermite_space import SpectralBasis
from .integral import Integrand
from .noise import LevySpec, WienerSpec, uniform_grid
from .semigroup import SpectralSemigroup

SCHEMA_VERSION = 1
CHECKS = ("isometry", "covariance", "levy", "kotelenez", "dyadic", "moment",
          "weak_residual", "uniqueness")
PRESETS = ("none", "ou", "linear", "sine", "cubic", "affine")

Vector = Union[float, list[float]]


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries field and line diagnostics."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _positive_int(v, what="≥ 1"):
    if v < 1:
        raise ValueError(f"must be {what}")
    return v


class BasisConfig(_Model):
    n_modes: int = 8
    eigenvalues: Union[Literal["hermite"], list[float]] = "hermite"

    _n = field_validator("n_modes")(_positive_int)


class SemigroupConfig(_Model):
    growth_rate: float = 0.0

    @field_validator("growth_rate")
    @classmethod
    def _nonneg(cls, v):
        if v < 0:
            raise ValueError("must be ≥ 0")
        return v


class AtomConfig(_Model):
    vector: list[float]
    weight: float = 1.0

    @field_validator("vector")
    @classmethod
    def _nonzero(cls, v):
        if not any(v):
            raise ValueError("jump atom must be a nonzero vector (LevySpec invariant)")
        return v

    @field_validator("weight")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("jump weight must be > 0 (LevySpec invariant)")
        return v


class WienerConfig(_Model):
    q: Union[list[float], list[list[float]]] = [1.0]
    breaks: list[float] = [0.0]


class NoiseConfig(_Model):
    wiener: WienerConfig = WienerConfig()
    drift: Optional[list[float]] = None
    atoms: list[AtomConfig] = []
    small_jump_radius: float = 1.0
    radius_index: float = 0.0


class IntegrandConfig(_Model):
    kind: Literal["identity", "time_scaled", "diagonal", "zero"] = "identity"
    diag: Optional[list[float]] = None
    p: float = 0.0


class NonlinearTerm(_Model):
    mode: int
    kind: Literal["sin", "tanh", "cube"]
    amplitude: float


class CoefficientConfig(_Model):
    preset: Literal["none", "ou", "linear", "sine", "cubic", "affine"] = "none"
    kappa: Optional[Vector] = None
    const: Optional[Vector] = None
    diffusion: Optional[Vector] = None
    diffusion_linear: Optional[Vector] = None
    nonlinear: Optional[list[NonlinearTerm]] = None
    validate_bounds: bool = True


class InitialConfig(_Model):
    mean: Vector = 0.0
    std: Vector = 0.0


class GridConfig(_Model):
    horizon: float = 1.0
    steps: int = 256

    _s = field_validator("steps")(_positive_int)

    @field_validator("horizon")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v


class DyadicConfig(_Model):
    levels: list[int] = list(range(2, 9))
    pairs: list[tuple[int, int]] = [(2, 8), (6, 8)]
    C_factors: list[float] = [0.5, 1.0, 2.0]


class EnsembleConfig(_Model):
    paths: int = 10_000
    seed: int = 20240611
    chunk_size: int = 4096
    workers: int = 1

    _p = field_validator("paths", "chunk_size", "workers")(_positive_int)

    @field_validator("seed")
    @classmethod
    def _seed(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("must be a 64-bit unsigned integer")
        return v


class Tolerances(_Model):
    z_limit: float = 3.0
    bit_exact_eps: float = 0.0
    C: list[float] = [0.5, 1.0, 2.0]
    ratio_band: tuple[float, float] = (1.2, 2.8)
    weak_modes: list[int] = [1, 2, 3, 4, 5]
    residual_paths: int = 100
    uniqueness: float = 1e-8
    picard_tol: float = 1e-10
    picard_iters: int = 30
    uniqueness_paths: int = 20
    moment_modes: list[int] = [8, 16, 32]
    moment_rtol: float = 0.05


class Scenario(_Model):
    schema_version: int = SCHEMA_VERSION
    name: str
    description: str = ""
    basis: BasisConfig = BasisConfig()
    semigroup: SemigroupConfig = SemigroupConfig()
    noise: NoiseConfig = NoiseConfig()
    integrand: IntegrandConfig = IntegrandConfig()
    coefficients: CoefficientConfig = CoefficientConfig()
    z0: InitialConfig = InitialConfig()
    rho: float = 0.0
    grid: GridConfig = GridConfig()
    dyadic: DyadicConfig = DyadicConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    checks: list[Literal[CHECKS]] = []
    tolerances: Tolerances = Tolerances()

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {v} (expected {SCHEMA_VERSION})")
        return v

    @model_validator(mode="after")
    def _cross_refs(self):
        n = self.basis.n_modes
        if isinstance(self.basis.eigenvalues, list) and len(self.basis.eigenvalues) != n:
            raise ValueError(f"basis.eigenvalues needs {n} entries")
        rows = self.noise.wiener.q
        rows = rows if rows and isinstance(rows[0], list) else [rows]
        if any(len(r) > n for r in rows):
            raise ValueError(f"noise.wiener.q has more than {n} modes")
        if len(rows) != len(self.noise.wiener.breaks):
            raise ValueError("noise.wiener needs one q row per break")
        for i, a in enumerate(self.noise.atoms):
            if len(a.vector) > n:
                raise ValueError(f"noise.atoms[{i}].vector has more than {n} modes")
        if self.noise.drift is not None and len(self.noise.drift) > n:
            raise ValueError(f"noise.drift has more than {n} modes")
        solver_checks = {"weak_residual", "uniqueness"} & set(self.checks)
        if solver_checks and self.coefficients.preset == "none":
            raise ValueError(f"checks {sorted(solver_checks)} need coefficients.preset")
        for k, m in self.dyadic.pairs:
            if m < k or k < 0:
                raise ValueError(f"dyadic pair ({k}, {m}) needs 0 <= k <= m")
        if any(k < 0 for k in self.dyadic.levels):
            raise ValueError("dyadic.levels must be ≥ 0")
        if "weak_residual" in self.checks and self.grid.steps % 2:
            raise ValueError("weak_residual needs an even grid.steps (it halves the grid)")
        if "weak_residual" in self.checks and any(
                not 1 <= j <= n for j in self.tolerances.weak_modes):
            raise ValueError(f"tolerances.weak_modes must lie in 1..{n}")
        for term in self.coefficients.nonlinear or []:
            if not 1 <= term.mode <= n:
                raise ValueError(f"nonlinear term mode {term.mode} outside 1..{n}")
        return self

    # -- construction -------------------------------------------------------

    def with_overrides(self, *, seed=None, paths=None, checks=None, workers=None,
                       n_modes=None, steps=None) -> "Scenario":
        data = self.model_dump(mode="json")
        if seed is not None:
            data["ensemble"]["seed"] = seed
        if paths is not None:
            data["ensemble"]["paths"] = paths
        if workers is not None:
            data["ensemble"]["workers"] = workers
        if checks is not None:
            data["checks"] = list(checks)
        if n_modes is not None:
            data["basis"]["n_modes"] = n_modes
        if steps is not None:
            data["grid"]["steps"] = steps
        return _validate(data, None)

    def build_basis(self) -> SpectralBasis:
        if self.basis.eigenvalues == "hermite":
            return SpectralBasis.hermite(self.basis.n_modes)
        return SpectralBasis(np.asarray(self.basis.eigenvalues, dtype=float))

    def build_semigroup(self) -> SpectralSemigroup:
        return SpectralSemigroup(self.build_basis(), self.semigroup.growth_rate)

    def build_noise(self) -> LevySpec:
        n = self.basis.n_modes
        rows = self.noise.wiener.q
        rows = rows if rows and isinstance(rows[0], list) else [rows]
        q = np.array([_pad(r, n) for r in rows])
        w = WienerSpec(q, np.asarray(self.noise.wiener.breaks, dtype=float))
        atoms = np.array([_pad(a.vector, n) for a in self.noise.atoms]).reshape(-1, n)
        weights = np.array([a.weight for a in self.noise.atoms])
        drift = None if self.noise.drift is None else _pad(self.noise.drift, n)
        return LevySpec(w, drift, atoms, weights, self.noise.small_jump_radius,
                        self.noise.radius_index, self.build_basis())

    def build_grid(self) -> np.ndarray:
        return uniform_grid(self.grid.horizon, self.grid.steps)

    def build_integrand(self) -> Integrand:
        b = self.build_basis()
        ic = self.integrand
        if ic.kind == "identity":
            return Integrand.identity(b, ic.p)
        if ic.kind == "zero":
            return Integrand.zero(b, ic.p)
        if ic.kind == "time_scaled":
            return Integrand.time_scaled(b, p=ic.p)
        return Integrand.diagonal(b, _pad(ic.diag or [], b.n_modes), ic.p)

    def coefficient_params(self) -> dict:
        """Preset defaults merged with explicit parameters."""
        c = self.coefficients
        n = self.basis.n_modes
        base = {
            "ou": dict(kappa=0.0, diffusion=1.0),
            "linear": dict(kappa=1.0, diffusion=1.0),
            "sine": dict(kappa=1.0, diffusion=1.0,
                         nonlinear=[(j, "sin", 0.5) for j in range(1, min(5, n) + 1)]),
            "cubic": dict(kappa=0.0, diffusion=1.0, nonlinear=[(1, "cube", 5.0)]),
            "affine": {},
            "none": {},
        }[c.preset]
        for key in ("kappa", "const", "diffusion", "diffusion_linear"):
            v = getattr(c, key)
            if v is not None:
                base[key] = v if np.isscalar(v) else _pad(v, n)
        if c.nonlinear is not None:
            base["nonlinear"] = [(t.mode, t.kind, t.amplitude) for t in c.nonlinear]
        return base

    def build_coefficients(self):
        from .see_solver import affine_coefficients
        if self.coefficients.preset == "none":
            return None
        return affine_coefficients(self.build_basis(), self.build_noise(),
                                   name=self.coefficients.preset, **self.coefficient_params())

    def build_z0(self):
        n = self.basis.n_modes
        m = self.z0.mean
        mean = np.full(n, float(m)) if np.isscalar(m) else _pad(m, n)
        s = self.z0.std
        std = np.full(n, float(s)) if np.isscalar(s) else _pad(s, n)
        return mean, std

    def digest(self) -> str:
        return scenario_digest(self)


def _pad(v, n) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    out = np.zeros(n)
    out[:v.size] = v
    return out


def scenario_digest(s: Scenario) -> str:
    blob = json.dumps(s.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _node_line(root, loc) -> Optional[int]:
    """1-based line of the YAML node at ``loc`` (deepest existing ancestor)."""
    node, line = root, None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _format_errors(err: ValidationError, root, source) -> str:
    lines = []
    for e in err.errors():
        loc = [x for x in e["loc"] if not (isinstance(x, str) and x.startswith(("list[", "float")))]
        name = ".".join(str(x) if not isinstance(x, int) else f"[{x}]" for x in loc)
        name = name.replace(".[", "[")
        msg = e["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        where = ""
        if root is not None:
            line = _node_line(root, loc)
            if line is not None:
                where = f"{source}:{line}: "
        lines.append(f"{where}{name} {msg}" if name else f"{where}{msg}")
    return "\n".join(lines)


def _validate(data, text, source="<scenario>") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    try:
        return Scenario.model_validate(data)
    except ValidationError as err:
        root = yaml.compose(text) if text is not None else None
        raise ScenarioError(_format_errors(err, root, source)) from None


def loads_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as err:
        mark = err.problem_mark
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ScenarioError(f"{where}: parse error: {err.problem}") from None
    return _validate(data, text, source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read {path}: {err.strerror}") from None
    return loads_scenario(text, str(path))


def dumps_scenario(s: Scenario) -> str:
    return yaml.safe_dump(s.model_dump(mode="json"), sort_keys=False, default_flow_style=None)


def shipped_scenarios() -> dict[str, Path]:
    root = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(root.glob("*.yaml"))}


def resolve_scenario(name_or_path) -> Path:
    """A file path, or the name of a shipped scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    raise ScenarioError(f"no scenario file or shipped scenario named {name_or_path!r}")
