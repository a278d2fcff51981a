"""Execute a scenario's checks and persist the results.

Artifacts in the output directory:

``manifest.json``
    scenario config and digest, seed, per-check rows, wall clock, version.
``summary.tsv``
    the per-check rows only; byte-identical across reruns.
``paths.tsv`` / ``jumps.tsv``
    optional per-path dumps (``path_id, time, x_1..x_N, seminorm`` and
    ``path_id, time, atom_index``).
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .convolution import (convolution_moment_target, convolve_exact, dyadic_cauchy_report,
                          dyadic_trend_report, kotelenez_report)
from .ensemble import Ensemble, mean_and_se
from .hermite_space import seminorm
from .integral import ito_isometry_report, z_score
from .noise import sample_levy
from .scenario import Scenario, ScenarioError
from .see_solver import (NonContractionError, moment_profile, sample_initial, solve_mild,
                         uniqueness_probe, validate_coefficients, weak_residual)

COLUMNS = ("check", "label", "estimate", "target", "sigma", "statistic", "passed")


@dataclass
class CheckResult:
    check: str
    label: str
    estimate: float
    target: float
    sigma: float
    statistic: float
    passed: bool

    def __post_init__(self):
        for name in ("estimate", "target", "sigma", "statistic"):
            setattr(self, name, float(getattr(self, name)))
        self.passed = bool(self.passed)


@dataclass
class RunManifest:
    scenario: str
    scenario_digest: str
    seed: int
    paths: int
    config: dict
    results: list[CheckResult]
    wall_clock: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self) -> str:
        d = asdict(self)
        d["status"] = "pass" if self.passed else "fail"
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d.pop("status", None)
        d["results"] = [CheckResult(**r) for r in d["results"]]
        return cls(**d)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "pass" if x else "FAIL"
    if isinstance(x, str):
        return x
    return repr(float(x))


def summary_table(results) -> str:
    lines = ["\t".join(COLUMNS)]
    for r in results:
        lines.append("\t".join(_fmt(getattr(r, c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


class _Context:
    """Objects built once per run and shared by the checks."""

    def __init__(self, s: Scenario):
        self.s = s
        self.basis = s.build_basis()
        self.sg = s.build_semigroup()
        self.spec = s.build_noise()
        self.grid = s.build_grid()
        self.T = float(self.grid[-1])
        self.ig = s.build_integrand()
        self.coeff = s.build_coefficients()
        self.z0_mean, self.z0_std = s.build_z0()
        e = s.ensemble
        self.ensemble = Ensemble(self.spec, self.grid, e.seed, e.paths, e.chunk_size, e.workers)
        self.tol = s.tolerances

    def z0_for(self, inc):
        return sample_initial(self.z0_mean, self.z0_std, inc.seed, inc.n_paths, inc.first_path)

    def solve(self, inc, coeff=None, sg=None):
        coeff = self.coeff if coeff is None else coeff
        sg = self.sg if sg is None else sg
        n = sg.basis.n_modes
        z0 = self.z0_for(inc)
        z0 = np.pad(z0, ((0, 0), (0, max(0, n - z0.shape[1]))))[:, :n]
        return solve_mild(sg, coeff, z0, inc, rho=self.s.rho)


def _z_row(check, label, est, target, se, zlim) -> CheckResult:
    z = z_score(est, target, se)
    return CheckResult(check, label, est, target, se, z, bool(abs(z) <= zlim))


def check_isometry(cx: _Context):
    rep = ito_isometry_report(cx.ig, cx.spec, cx.grid, cx.ensemble)
    return [_z_row("isometry", f"E|I_T|^2 ({cx.ig.name})", rep.lhs, rep.rhs, rep.se,
                   cx.tol.z_limit)]


def check_covariance(cx: _Context):
    n = cx.basis.n_modes
    phi = cx.basis.unit(1)
    phi2 = phi + (cx.basis.unit(2) if n > 1 else 0.0)
    spec = cx.spec

    def stat(inc):
        mT = inc.martingale_at_grid()[:, -1]
        return (mT @ phi) * (mT @ phi2)

    prod = cx.ensemble.map(stat)
    est, se = mean_and_se(prod)
    target = float(np.sum(spec.wiener.integral(0.0, cx.T) * phi * phi2))
    for k in spec.coordinates():
        if k and spec.in_ball[k - 1]:
            u = spec.atoms[k - 1]
            target += spec.weights[k - 1] * cx.T * float(u @ phi) * float(u @ phi2)
    return [_z_row("covariance", "E<M_T,e1><M_T,e1+e2>", est, target, se, cx.tol.z_limit)]


def _linearity_defect(inc) -> float:
    """Deviation of each atom's jump part from ``count u - w t u`` between jumps."""
    spec = inc.spec
    worst = 0.0
    for row in range(min(inc.n_paths, 200)):
        for k in range(1, spec.n_atoms + 1):
            sel = (inc.event_path == row) & (inc.event_atom == k)
            jt = np.concatenate([[0.0], inc.event_time[sel], [inc.horizon]])
            probe = np.concatenate([jt[:-1] + f * np.diff(jt) for f in (0.25, 0.5, 0.75)])
            got = inc.jump_component(probe, row, k)
            u = spec.atoms[k - 1]
            w = spec.weights[k - 1] if spec.in_ball[k - 1] else 0.0
            count = np.array([sum(1 for t in inc.event_time[sel] if t <= p) for p in probe],
                             dtype=float)
            expect = count[:, None] * u - (w * probe)[:, None] * u
            worst = max(worst, float(np.max(np.abs(got - expect), initial=0.0)))
    return worst


def check_levy(cx: _Context):
    spec = cx.spec

    def stat(inc):
        counts = inc.jump_counts().sum(axis=1).astype(float)
        mT = inc.martingale_at_grid()[:, -1]
        return counts, mT

    counts, mT = cx.ensemble.map(stat)
    rows = []
    est, se = mean_and_se(counts)
    rows.append(_z_row("levy", "jump count mean", est, float(np.sum(spec.weights) * cx.T),
                       se, cx.tol.z_limit))
    zs = []
    for j in range(spec.n_modes):
        m, s = mean_and_se(mT[:, j])
        if s > 0:
            zs.append((abs(m / s), m, s, j))
    if zs:
        z, m, s, j = max(zs)
        rows.append(CheckResult("levy", f"martingale mean (worst mode {j + 1})", m, 0.0, s,
                                m / s, bool(z <= cx.tol.z_limit)))
    block = cx.ensemble.sample(0, min(cx.ensemble.n_paths, 200))
    dev = _linearity_defect(block)
    rows.append(CheckResult("levy", "compensator linearity", dev, 0.0, 0.0, dev,
                            bool(dev <= cx.tol.bit_exact_eps)))
    return rows


def check_kotelenez(cx: _Context):
    rows = []
    for tc in kotelenez_report(cx.sg, cx.ig, cx.spec, cx.grid, cx.tol.C, cx.ensemble):
        stat = (tc.tail - tc.bound) / tc.se if tc.se > 0 else (0.0 if tc.passed else math.inf)
        rows.append(CheckResult("kotelenez", f"P(sup|X|>{tc.C!r})", tc.tail, tc.bound, tc.se,
                                stat, tc.passed))
    return rows


def check_dyadic(cx: _Context):
    d = cx.s.dyadic
    trend = dyadic_trend_report(cx.sg, cx.ig, cx.ensemble, d.levels)
    rows = [CheckResult("dyadic", f"E sup|Y^{k}-X|^2", m, math.nan, se, math.nan,
                        trend.nonincreasing)
            for k, m, se in zip(trend.levels, trend.mean_sq_sup, trend.se)]
    for k, m in d.pairs:
        rep = dyadic_cauchy_report(cx.sg, cx.ig, cx.spec, cx.grid, cx.ensemble, k, m,
                                   d.C_factors)
        for tc in rep.tails:
            stat = (tc.tail - tc.bound) / tc.se if tc.se > 0 else 0.0
            rows.append(CheckResult("dyadic", f"P(sup|Y^{m}-Y^{k}|>{tc.C!r})", tc.tail,
                                    tc.bound, tc.se, stat, tc.passed))
    return rows


def _additive_ou(cx: _Context) -> bool:
    p = cx.s.coefficient_params()
    spec = cx.spec
    return (cx.s.coefficients.preset == "ou" and not p.get("nonlinear")
            and not np.any(p.get("const", 0.0)) and not np.any(p.get("diffusion_linear", 0.0))
            and np.all(np.asarray(p.get("diffusion")) == 1.0)
            and not np.any(spec.drift) and bool(np.all(spec.in_ball))
            and not np.any(cx.z0_mean) and not np.any(cx.z0_std))


def check_moment(cx: _Context):
    rows = []
    p = cx.ig.p
    target = convolution_moment_target(cx.sg, cx.ig, cx.spec, cx.T)

    def conv(inc):
        x = convolve_exact(cx.sg, cx.ig, inc, martingale_only=True)
        return seminorm(cx.basis, -p, x.terminal()) ** 2

    est, se = mean_and_se(cx.ensemble.map(conv))
    rows.append(_z_row("moment", "E|X_T|^2 convolution", est, target, se, cx.tol.z_limit))
    if cx.coeff is not None:
        def sol(inc):
            x = cx.solve(inc)
            return seminorm(cx.basis, -cx.s.rho, x.terminal()) ** 2, x.blown.astype(float)

        sq, blown = cx.ensemble.map(sol)
        nb = int(blown.sum())
        m, s = mean_and_se(sq[blown == 0])
        if _additive_ou(cx) and cx.s.rho == p:
            rows.append(_z_row("moment", "E|X_T|^2 solution", m, target, s, cx.tol.z_limit))
        else:
            rows.append(CheckResult("moment", "E|X_T|^2 solution", m, math.nan, s, math.nan,
                                    bool(np.isfinite(m))))
        rows.append(CheckResult("moment", "blown-up paths", float(nb), 0.0, 0.0, float(nb),
                                nb == 0))
        rows.extend(_moment_refinement(cx))
    return rows


def _moment_refinement(cx: _Context):
    """sup_t E|X_t|^2 on the same draws for increasing mode counts."""
    sups = []
    count = min(cx.ensemble.n_paths, cx.ensemble.chunk_size)
    for n in cx.tol.moment_modes:
        s = cx.s.with_overrides(n_modes=n)
        sub = _Context(s)
        inc = sample_levy(sub.spec, sub.grid, s.ensemble.seed, count, 0)
        sups.append(float(np.max(moment_profile(sub.solve(inc)))))
    rel = max((abs(b - a) / abs(a) for a, b in zip(sups, sups[1:])), default=0.0)
    label = "sup_t E|X_t|^2 over N=" + ",".join(str(n) for n in cx.tol.moment_modes)
    # estimate: largest relative change; statistic: the value at the finest N
    return [CheckResult("moment", label, rel, cx.tol.moment_rtol, 0.0, sups[-1],
                        bool(rel < cx.tol.moment_rtol))]


def check_weak_residual(cx: _Context):
    rows = []
    fine = sample_levy(cx.spec, cx.grid, cx.s.ensemble.seed, cx.tol.residual_paths, 0)
    coarse = fine.coarsen(2)
    xf, xc = cx.solve(fine), cx.solve(coarse)
    lo, hi = cx.tol.ratio_band
    for j in cx.tol.weak_modes:
        psi = cx.basis.unit(j)
        rf = weak_residual(xf, cx.sg, cx.coeff, fine, psi, per_path=True)
        rc = weak_residual(xc, cx.sg, cx.coeff, coarse, psi, per_path=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = rc / rf
        ratio = ratio[np.isfinite(ratio)]
        if ratio.size == 0:
            rows.append(CheckResult("weak_residual", f"halving ratio psi=e{j}", math.nan,
                                    math.nan, math.nan, float(np.nanmax(rf)), False))
            continue
        m, se = mean_and_se(ratio)
        rows.append(CheckResult("weak_residual", f"halving ratio psi=e{j}", m, 2.0, se,
                                float(np.mean(rf)), bool(lo <= m <= hi)))
    return rows


def check_uniqueness(cx: _Context):
    inc = sample_levy(cx.spec, cx.grid, cx.s.ensemble.seed, cx.tol.uniqueness_paths, 0)
    z0 = cx.z0_for(inc)
    try:
        d = uniqueness_probe(cx.sg, cx.coeff, z0, inc, iters=cx.tol.picard_iters,
                             tol=cx.tol.picard_tol, rho=cx.s.rho)
    except NonContractionError:
        return [CheckResult("uniqueness", "Picard distance (non-contractive)", math.inf,
                            cx.tol.uniqueness, 0.0, math.inf, False)]
    return [CheckResult("uniqueness", "Picard distance", d, cx.tol.uniqueness, 0.0, d,
                        bool(d < cx.tol.uniqueness))]


CHECK_FUNCTIONS = {
    "isometry": check_isometry,
    "covariance": check_covariance,
    "levy": check_levy,
    "kotelenez": check_kotelenez,
    "dyadic": check_dyadic,
    "moment": check_moment,
    "weak_residual": check_weak_residual,
    "uniqueness": check_uniqueness,
}


def validate_scenario(s: Scenario, *, seed: int = 0) -> None:
    """Model construction and the sampled growth/Lipschitz validation."""
    try:
        cx = _Context(s)
    except ValueError as err:
        raise ScenarioError(f"{s.name}: {err}") from None
    if cx.coeff is not None and s.coefficients.validate_bounds:
        res = validate_coefficients(cx.coeff, cx.spec, cx.T, seed=seed)
        if not res.ok:
            cond, r, detail = res.failures[0]
            raise ScenarioError(f"{s.name}: coefficients fail the {cond} condition at "
                                f"r={r:.4g} ({detail}); {len(res.failures)} of "
                                f"{res.n_samples} samples violate; set "
                                "coefficients.validate_bounds: false to run anyway")


def run_scenario(s: Scenario, out_dir=None, *, dump_paths: int = 0) -> RunManifest:
    """Run the scenario's checks in order; write artifacts if ``out_dir`` is given."""
    validate_scenario(s)
    cx = _Context(s)
    results, clock = [], {}
    t_all = time.perf_counter()
    for name in s.checks:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            results.extend(CHECK_FUNCTIONS[name](cx))
        clock[name] = time.perf_counter() - t0
    clock["total"] = time.perf_counter() - t_all
    manifest = RunManifest(s.name, s.digest(), s.ensemble.seed, s.ensemble.paths,
                           s.model_dump(mode="json"), results, clock)
    if out_dir is not None:
        write_artifacts(manifest, out_dir)
        if dump_paths:
            dump_path_tables(cx, dump_paths, out_dir)
    return manifest


def write_artifacts(manifest: RunManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(manifest.to_json())
    (out / "summary.tsv").write_text(summary_table(manifest.results))
    return out


def dump_path_tables(cx: _Context, n_paths: int, out_dir) -> None:
    """Grid values of the solution (or the convolution) for the first paths."""
    inc = sample_levy(cx.spec, cx.grid, cx.s.ensemble.seed, n_paths, 0)
    if cx.coeff is not None:
        path, rho = cx.solve(inc), cx.s.rho
    else:
        path, rho = convolve_exact(cx.sg, cx.ig, inc), cx.ig.p
    n = cx.basis.n_modes
    out = Path(out_dir)
    head = ["path_id", "time"] + [f"x{j}" for j in range(1, n + 1)] + ["seminorm"]
    norms = seminorm(cx.basis, -rho, path.values)
    with open(out / "paths.tsv", "w") as fh:
        fh.write("\t".join(head) + "\n")
        for p in range(inc.n_paths):
            for i, t in enumerate(cx.grid):
                vals = [repr(float(v)) for v in path.values[p, i]]
                fh.write("\t".join([str(p), repr(float(t))] + vals
                                   + [repr(float(norms[p, i]))]) + "\n")
    with open(out / "jumps.tsv", "w") as fh:
        fh.write("path_id\ttime\tatom_index\n")
        for p, t, a in zip(inc.event_path, inc.event_time, inc.event_atom):
            fh.write(f"{int(p)}\t{float(t)!r}\t{int(a)}\n")


@dataclass
class ManifestDiff:
    entries: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries

    def report(self) -> str:
        lines = [f"warning: {w}" for w in self.warnings]
        for e in self.entries:
            lines.append(f"{e['kind']}\t{e['field']}\t{e['a']!r}\t{e['b']!r}")
        return "\n".join(lines) if lines else "no differences"


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


_SAMPLING_FIELDS = ("ensemble.", "name", "description", "checks")


def _same(x, y) -> bool:
    if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
        return True
    return x == y


def compare_manifests(a: RunManifest, b: RunManifest) -> ManifestDiff:
    """Field-by-field difference of two manifests, ignoring wall clock.

    Differing targets are tagged ``config-divergence`` when the configs
    differ in anything besides ensemble size, seed and worker settings.
    """
    diff = ManifestDiff()
    if a.version != b.version:
        diff.warnings.append(f"version mismatch: {a.version} vs {b.version}")
    ca, cb = _flatten(a.config), _flatten(b.config)
    model_change = False
    for key in sorted(set(ca) | set(cb)):
        if not _same(ca.get(key), cb.get(key)):
            diff.entries.append(dict(kind="config", field=key, a=ca.get(key), b=cb.get(key)))
            if not key.startswith(_SAMPLING_FIELDS):
                model_change = True
    ra = {(r.check, r.label): r for r in a.results}
    rb = {(r.check, r.label): r for r in b.results}
    for key in list(ra) + [k for k in rb if k not in ra]:
        name = f"{key[0]}/{key[1]}"
        if key not in ra or key not in rb:
            diff.entries.append(dict(kind="missing", field=name, a=key in ra, b=key in rb))
            continue
        x, y = ra[key], rb[key]
        for col in ("estimate", "target", "sigma", "statistic", "passed"):
            if not _same(getattr(x, col), getattr(y, col)):
                kind = col
                if col == "target" and model_change:
                    kind = "config-divergence"
                diff.entries.append(dict(kind=kind, field=f"{name}.{col}",
                                         a=getattr(x, col), b=getattr(y, col)))
    return diff
