"""Acceptance suite: each criterion at its stated size and tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion verdicts
are printed in the "acceptance criteria" section of the terminal summary.
"""

import math
import time

import numpy as np

from nuclear_spde.hermite_space import SpectralBasis, hs_partial_sums, seminorm
from nuclear_spde.runner import run_scenario, summary_table
from nuclear_spde.scenario import load_scenario, resolve_scenario, shipped_scenarios
from nuclear_spde.semigroup import SpectralSemigroup


def scenario(name, **overrides):
    return load_scenario(resolve_scenario(name)).with_overrides(**overrides)


def timed_run(s):
    t0 = time.perf_counter()
    m = run_scenario(s)
    return m, time.perf_counter() - t0


def test_1_ito_isometry(criterion):
    targets = {"isometry_wiener": 1.0, "isometry_time": 1 / 3, "isometry_mixed": 2.0}
    ok = True
    details = []
    for name, exact in targets.items():
        m, secs = timed_run(scenario(name, paths=100_000, checks=["isometry"]))
        r = m.results[0]
        good = r.passed and abs(r.statistic) <= 3 and secs <= 60
        # the quadrature rhs sits within O(dt) of the closed form
        good &= abs(r.target - exact) <= 1e-3
        ok &= good
        details.append(f"{name} lhs={r.estimate:.5f} rhs={r.target:.5f} z={r.statistic:+.2f} "
                       f"{secs:.0f}s")
    criterion(1, "Itô isometry |z|<=3 at 1e5 paths", ok, "; ".join(details))
    assert ok


def test_2_semigroup_contracts(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n_draws, N = 10_000, 32
    sg0 = SpectralSemigroup(SpectralBasis.hermite(N))
    worst_margin = math.inf
    worst_law = 0.0
    for _ in range(n_draws // 1000):
        v = rng.standard_normal((1000, N)) * np.exp(rng.uniform(-5, 5, (1000, 1)))
        s, t = rng.uniform(0, 5, 1000), rng.uniform(0, 5, 1000)
        r = rng.uniform(-3, 3, 1000)
        theta = rng.uniform(0, 1, 1000)
        for i in range(1000):
            sg = SpectralSemigroup(sg0.basis, theta[i])
            scale = max(1.0, float(seminorm(sg.basis, r[i], v[i])))
            worst_margin = min(worst_margin, float(sg.exp_bound_margin(t[i], r[i], v[i])) / scale)
        lhs = sg0.multipliers(s + t) * v
        rhs = sg0.multipliers(s) * (sg0.multipliers(t) * v)
        den = np.maximum(np.abs(lhs), 1e-300)
        worst_law = max(worst_law, float(np.max(np.abs(lhs - rhs) / den)))
    secs = time.perf_counter() - t0
    ok = worst_margin >= -1e-12 and worst_law <= 1e-12 and secs <= 5
    criterion(2, "semigroup bound and law over 1e4 draws", ok,
              f"min margin/scale={worst_margin:.2e}, max law rel err={worst_law:.2e}, {secs:.1f}s")
    assert ok


def test_3_hilbert_schmidt_threshold(criterion):
    limit = math.pi ** 2 / 2 - 4
    s1 = hs_partial_sums(SpectralBasis.hermite(10_000), 1.0)[-1]
    half = [hs_partial_sums(SpectralBasis.hermite(n), 0.5)[-1] for n in (100, 1000, 10_000)]
    steps = np.diff(half)
    ok = abs(s1 - limit) <= 1e-3 and np.all(steps > 2.0)
    criterion(3, "HS partial sums", ok,
              f"gap 1: S(1e4)={s1:.6f} vs {limit:.6f} (|diff|={abs(s1 - limit):.1e}); "
              f"gap 1/2: {', '.join(f'{h:.3f}' for h in half)}")
    assert ok


def test_4_kotelenez(criterion):
    ok = True
    details = []
    for name in ("ou", "levy_ou"):
        m, secs = timed_run(scenario(name, paths=100_000, checks=["kotelenez"]))
        ok &= all(r.passed for r in m.results) and secs <= 120
        details.append(name + " " + ", ".join(
            f"C={r.label.split('>')[1].rstrip(')')}: {r.estimate:.4f}<= {r.target:.3f}"
            for r in m.results) + f" ({secs:.0f}s)")
    criterion(4, "Kotelenez tail <= bound + 3 SE at 1e5 paths", ok, "; ".join(details))
    assert ok


def test_5_dyadic(criterion):
    ok = True
    details = []
    for name in ("ou", "levy_ou"):
        m = run_scenario(scenario(name, paths=10_000, checks=["dyadic"]))
        trend = [r.estimate for r in m.results if r.label.startswith("E sup")]
        tails = [r for r in m.results if r.label.startswith("P(")]
        mono = all(b <= a for a, b in zip(trend, trend[1:]))
        pair = {}
        for r in tails:
            pair.setdefault(r.label.split("|")[1], []).append(r.passed)
        ok &= mono and all(r.passed for r in tails)
        details.append(f"{name}: E sup^2 k=2..8 " + " ".join(f"{x:.1e}" for x in trend)
                       + f"; F^(m,k) tails ok={all(r.passed for r in tails)}")
    criterion(5, "dyadic trend nonincreasing and Cauchy bound", ok, "; ".join(details))
    assert ok


def test_6_ou_moment(criterion):
    m = run_scenario(scenario("ou", paths=100_000, checks=["moment"]))
    rows = {r.label: r for r in m.results}
    conv, sol = rows["E|X_T|^2 convolution"], rows["E|X_T|^2 solution"]
    exact = 1 - math.exp(-1)
    ok = (conv.passed and sol.passed and abs(conv.target - exact) < 1e-9
          and abs(conv.statistic) <= 3 and abs(sol.statistic) <= 3)
    criterion(6, "OU terminal moment 1-e^-1 within 3 sigma", ok,
              f"convolution {conv.estimate:.5f} (z={conv.statistic:+.2f}), "
              f"solve_mild {sol.estimate:.5f} (z={sol.statistic:+.2f}), target {exact:.5f}")
    assert ok


def test_7_weak_mild(criterion):
    ok = True
    details = []
    for name in ("ou_field", "levy_ou"):
        s = scenario(name, checks=["weak_residual"])
        assert s.tolerances.residual_paths == 100 and s.tolerances.weak_modes == [1, 2, 3, 4, 5]
        m = run_scenario(s)
        ok &= all(r.passed and 1.2 <= r.estimate <= 2.8 for r in m.results)
        details.append(name + " " + " ".join(f"{r.estimate:.2f}" for r in m.results))
    criterion(7, "weak residual halving ratio in [1.2, 2.8], psi=e1..e5, 100 seeds", ok,
              "; ".join(details))
    assert ok


def test_8_uniqueness(criterion):
    ok = True
    details = []
    for name, path in shipped_scenarios().items():
        s = load_scenario(path)
        if s.coefficients.preset == "none" or not s.coefficients.validate_bounds:
            continue
        m = run_scenario(s.with_overrides(checks=["uniqueness"]))
        r = m.results[0]
        ok &= r.passed and r.estimate < 1e-8
        details.append(f"{name} {r.estimate:.1e}")
    criterion(8, "uniqueness probe < 1e-8 on bound-validated scenarios", ok, ", ".join(details))
    assert ok


def test_9_levy_structure(criterion):
    ok = True
    details = []
    for name in ("levy_ou", "isometry_mixed"):
        m = run_scenario(scenario(name, paths=100_000, checks=["levy"]))
        ok &= all(r.passed for r in m.results)
        rows = {r.label.split(" (")[0]: r for r in m.results}
        c = rows["jump count mean"]
        mm = rows["martingale mean"]
        lin = rows["compensator linearity"]
        details.append(f"{name}: count {c.estimate:.4f} vs {c.target:.2f} (z={c.statistic:+.2f}), "
                       f"worst mean z={mm.statistic:+.2f}, linearity dev={lin.estimate:g}")
    criterion(9, "Lévy-Itô structure", ok, "; ".join(details))
    assert ok


def test_10_determinism(criterion):
    ok = True
    names = []
    for name, path in shipped_scenarios().items():
        s = load_scenario(path).with_overrides(paths=600)
        a = summary_table(run_scenario(s.with_overrides(workers=1)).results)
        b = summary_table(run_scenario(s.with_overrides(workers=3)).results)
        ok &= a.encode() == b.encode()
        names.append(name)
    criterion(10, "byte-identical summaries across reruns and worker counts", ok,
              f"{len(names)} shipped scenarios at 600 paths")
    assert ok
