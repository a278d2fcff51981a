import math

import numpy as np
import pytest

from nuclear_spde.convolution import convolve_exact
from nuclear_spde.hermite_space import SpectralBasis, seminorm
from nuclear_spde.integral import Integrand
from nuclear_spde.noise import LevySpec, WienerSpec, sample_levy, uniform_grid
from nuclear_spde.see_solver import (CoefficientError, NoiseMismatchError, NonContractionError,
                                     affine_coefficients, jump_inheritance_defect,
                                     moment_profile, sample_initial, solve_mild,
                                     uniqueness_probe, validate_coefficients, weak_residual)
from nuclear_spde.semigroup import SpectralSemigroup

N = 6
B = SpectralBasis.hermite(N)
SG = SpectralSemigroup(B)
OU = LevySpec.from_wiener(WienerSpec.constant(np.r_[1.0, np.zeros(N - 1)]))
FIELD = LevySpec.from_wiener(WienerSpec.constant(np.r_[np.ones(5), np.zeros(N - 5)]))
LEVY = LevySpec(WienerSpec.constant(np.r_[np.ones(5), np.zeros(N - 5)]),
                drift=np.r_[0.1, np.zeros(N - 1)],
                atoms=[np.r_[0.5, np.zeros(N - 1)], np.r_[0.0, 2.0, np.zeros(N - 2)]],
                weights=[2.0, 0.7], basis=B)


def e(j):
    return B.unit(j)


def test_no_coefficients_is_free_flow():
    c = affine_coefficients(B, OU, diffusion=0.0)
    z0 = e(1) + 0.5 * e(3) - 2 * e(6)
    inc = sample_levy(OU, uniform_grid(1.0, 100), 1, 3)
    x = solve_mild(SG, c, z0, inc)
    for i, t in enumerate(inc.grid):
        assert np.array_equal(x.values[0, i], SG.apply(t, z0))


def test_linear_drift_ode_first_order():
    c = affine_coefficients(B, OU, kappa=1.0, diffusion=0.0)
    exact = math.exp(-1.5)
    vals = {}
    for K in (64, 128, 256):
        inc = sample_levy(OU, uniform_grid(1.0, K), 1)
        vals[K] = solve_mild(SG, c, e(1), inc).values[0, -1, 0]
    err = {K: v - exact for K, v in vals.items()}
    assert err[64] / err[128] == pytest.approx(2.0, rel=0.02)
    assert err[128] / err[256] == pytest.approx(2.0, rel=0.02)
    assert abs(2 * vals[256] - vals[128] - exact) < 1e-5


def test_ou_terminal_variance_matches_convolution():
    c = affine_coefficients(B, OU)
    inc = sample_levy(OU, uniform_grid(1.0, 128), 2, 20_000)
    x = solve_mild(SG, c, np.zeros(N), inc)
    conv = convolve_exact(SG, Integrand.identity(B), inc)
    np.testing.assert_allclose(x.values, conv.values, atol=1e-13)
    sq = seminorm(B, 0.0, x.terminal()) ** 2
    assert abs(sq.mean() - (1 - math.exp(-1))) <= 3 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_picard_agrees_with_exponential_euler():
    c = affine_coefficients(B, FIELD, kappa=1.0, nonlinear=[(1, "sin", 0.8), (2, "tanh", 0.5)],
                            diffusion_linear=0.2)
    inc = sample_levy(FIELD, uniform_grid(1.0, 64), 3, 5)
    z0 = e(1) - 0.5 * e(2)
    ee = solve_mild(SG, c, z0, inc)
    pc = solve_mild(SG, c, z0, inc, "picard", iters=80, tol=1e-13)
    assert pc.flags["converged"] and not pc.flags["non_contractive"]
    assert np.max(ee.sup_distance(pc)) < 1e-11


def test_unknown_scheme_and_bad_z0():
    c = affine_coefficients(B, OU)
    inc = sample_levy(OU, uniform_grid(1.0, 4), 1)
    with pytest.raises(ValueError):
        solve_mild(SG, c, np.zeros(N), inc, "rk4")
    with pytest.raises(ValueError):
        solve_mild(SG, c, np.full(N, np.nan), inc)


def test_blow_up_flagged_not_dropped():
    c = affine_coefficients(B, OU, nonlinear=[(1, "cube", 5.0)], diffusion=0.0)
    inc = sample_levy(OU, uniform_grid(1.0, 16), 1, 3)
    z0 = np.zeros((3, N))
    z0[1, 0] = 10.0
    x = solve_mild(SG, c, z0, inc)
    assert x.blown.tolist() == [False, True, False]
    assert x.flags["blown"] == 1
    assert np.all(np.isnan(x.values[1, -1])) and np.all(np.isfinite(x.values[[0, 2]]))


def test_weak_residual_deterministic_is_first_order():
    c = affine_coefficients(B, OU, diffusion=0.0, kappa=0.5)
    r = []
    for K in (32, 64, 128):
        inc = sample_levy(OU, uniform_grid(1.0, K), 1)
        x = solve_mild(SG, c, e(2), inc)
        r.append(weak_residual(x, SG, c, inc, e(2)))
    assert r[0] / r[1] == pytest.approx(2.0, rel=0.05)
    assert r[1] / r[2] == pytest.approx(2.0, rel=0.05)


def test_weak_residual_orthogonal_test_vector_is_zero():
    c = affine_coefficients(B, OU)
    inc = sample_levy(OU, uniform_grid(1.0, 64), 5, 10)
    x = solve_mild(SG, c, np.zeros(N), inc)
    assert weak_residual(x, SG, c, inc, e(4)) == 0.0


def test_weak_residual_rejects_other_draw():
    c = affine_coefficients(B, OU)
    inc = sample_levy(OU, uniform_grid(1.0, 16), 5, 2)
    other = sample_levy(OU, uniform_grid(1.0, 16), 6, 2)
    x = solve_mild(SG, c, np.zeros(N), inc)
    with pytest.raises(NoiseMismatchError):
        weak_residual(x, SG, c, other, e(1))


@pytest.mark.parametrize("spec", [OU, LEVY])
def test_weak_residual_halving_ratio(spec):
    c = affine_coefficients(B, spec)
    fine = sample_levy(spec, uniform_grid(1.0, 256), 7, 100)
    coarse = fine.coarsen(2)
    xf = solve_mild(SG, c, np.zeros(N), fine)
    xc = solve_mild(SG, c, np.zeros(N), coarse)
    ratio = (weak_residual(xc, SG, c, coarse, e(1), per_path=True)
             / weak_residual(xf, SG, c, fine, e(1), per_path=True))
    assert 1.2 <= ratio.mean() <= 2.8


def test_uniqueness_probe_cases():
    inc = sample_levy(LEVY, uniform_grid(1.0, 64), 8, 5)
    zero = affine_coefficients(B, LEVY, diffusion=0.0)
    assert uniqueness_probe(SG, zero, e(1), inc) == 0.0
    ou = affine_coefficients(B, LEVY)
    assert uniqueness_probe(SG, ou, np.zeros(N), inc) < 1e-8
    sine = affine_coefficients(B, LEVY, kappa=1.0, nonlinear=[(1, "sin", 0.5)],
                               diffusion_linear=0.3)
    assert uniqueness_probe(SG, sine, e(1), inc, iters=80) < 1e-8


def test_non_lipschitz_drift_is_not_contractive():
    cubic = affine_coefficients(B, OU, nonlinear=[(1, "cube", 5.0)])
    assert not validate_coefficients(cubic, OU, 1.0).ok
    inc = sample_levy(OU, uniform_grid(1.0, 64), 9, 4)
    with pytest.raises(NonContractionError):
        uniqueness_probe(SG, cubic, 3 * e(1), inc)


def test_jump_inheritance_identity():
    c = affine_coefficients(B, LEVY)
    inc = sample_levy(LEVY, uniform_grid(1.0, 32), 10, 50)
    x = solve_mild(SG, c, np.zeros(N), inc)
    assert np.array_equal(x.event_time, inc.event_time)
    assert jump_inheritance_defect(x, c, inc) == 0.0
    assert np.array_equal(x.event_jump, LEVY.atoms[inc.event_atom - 1])


def test_jump_inheritance_state_dependent():
    c = affine_coefficients(B, LEVY, kappa=1.0, diffusion=0.5, diffusion_linear=0.3)
    inc = sample_levy(LEVY, uniform_grid(1.0, 32), 10, 50)
    x = solve_mild(SG, c, e(1), inc)
    assert jump_inheritance_defect(x, c, inc) == 0.0
    np.testing.assert_array_equal(x.event_value, x.event_left + x.event_jump)


def test_validators():
    lin = affine_coefficients(B, LEVY, kappa=1.0, const=0.2, diffusion=0.5,
                              diffusion_linear=0.3)
    sine = affine_coefficients(B, LEVY, kappa=1.0, nonlinear=[(1, "sin", 0.5), (3, "tanh", 1.0)])
    for c in (affine_coefficients(B, LEVY), lin, sine):
        res = validate_coefficients(c, LEVY, 1.0, n_samples=300)
        assert res.ok, res.failures[:3]
    # dense test vectors: a mode-wise Lipschitz drift is not Lipschitz against <g, psi>
    dense = validate_coefficients(sine, LEVY, 1.0, psi_dist="gaussian", n_samples=300)
    assert not dense.ok
    assert any(f[0] == "Lipschitz B" for f in dense.failures)


def test_bad_coefficient_table():
    with pytest.raises(CoefficientError):
        affine_coefficients(B, OU, nonlinear=[(1, "exp", 1.0)])
    with pytest.raises(CoefficientError):
        affine_coefficients(B, OU, nonlinear=[(N + 1, "sin", 1.0)])


def test_sample_initial():
    z = sample_initial(np.ones(3), 0.0, 1, 4)
    assert np.array_equal(z, np.ones((4, 3)))
    a = sample_initial(np.zeros(3), 2.0, 5, 10)
    b = sample_initial(np.zeros(3), 2.0, 5, 4, first_path=6)
    assert np.array_equal(a[6:], b)
    big = sample_initial(np.zeros(2), 2.0, 5, 20_000)
    assert abs(big[:, 0].std() - 2.0) < 0.05


def test_moment_profile_stable_under_mode_refinement():
    sups = []
    for n in (8, 16, 32):
        b = SpectralBasis.hermite(n)
        spec = LevySpec.from_wiener(WienerSpec.constant(np.r_[np.ones(5), np.zeros(n - 5)]))
        c = affine_coefficients(b, spec, kappa=1.0, nonlinear=[(1, "sin", 0.5)])
        inc = sample_levy(spec, uniform_grid(1.0, 64), 12, 500)
        sups.append(np.max(moment_profile(solve_mild(SpectralSemigroup(b), c, np.zeros(n), inc))))
    assert all(np.isfinite(sups))
    assert max(abs(b - a) / a for a, b in zip(sups, sups[1:])) < 0.05
