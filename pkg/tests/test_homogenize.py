import numpy as np
import pytest

from gradphi.dynamics import SlopePath, stable_dt
from gradphi.homogenize import (
    build_two_scale,
    error_terms,
    estimate_hessian,
    estimate_tau,
    excess_decay,
    flux_decay_experiment,
    flux_weak_norm,
    linearization_modulus,
    make_correctors,
    partition_of_unity,
    slope_stability_check,
    variance_with_jackknife,
    _edge_average,
)
from gradphi.lattice import DirichletDomain, SpaceTimeField, make_torus
from gradphi.noise import NoiseSource
from gradphi.parabolic import EffectiveGradient, solve_homogenized
from gradphi.potential import quadratic, soft_quartic


def test_tau_quadratic_centered_on_tilt():
    est = estimate_tau((1.0, 0.0), 8, quadratic(), 100, NoiseSource(seed=1),
                       keep_samples=True)
    assert est.samples.shape == (100, 2)
    assert np.all(np.abs(est.mean - np.array([1.0, 0.0])) <= 3 * est.stderr)


def test_tau_zero_tilt_symmetric():
    est = estimate_tau((0.0, 0.0), 8, soft_quartic(0.5), 64, NoiseSource(seed=2))
    assert np.all(np.abs(est.mean) <= 3 * est.stderr + 1e-12)


def test_tau_requires_replicas():
    with pytest.raises(ValueError):
        estimate_tau((0.0, 0.0), 4, quadratic(), 1, NoiseSource(seed=1))


def test_tau_constant_equals_constant_path_on_same_noise():
    const = estimate_tau((0.5, 0.0), 6, soft_quartic(0.5), 8,
                         NoiseSource(seed=3), init="zero")
    path = SlopePath.constant((0.5, 0.0))
    viapath = estimate_tau(path, 6, soft_quartic(0.5), 8,
                           NoiseSource(seed=3), init="zero")
    assert np.max(np.abs(const.mean - viapath.mean)) <= 1e-12


def test_hessian_quadratic_is_exactly_identity():
    est = estimate_hessian((0.0, 0.0), 6, quadratic(), 4, NoiseSource(seed=4))
    assert np.max(np.abs(est.matrix - np.eye(2))) <= 3 * est.stderr.max() + 1e-12
    assert est.positive


def test_hessian_axis_relabeling_symmetry():
    # at zero tilt the two diagonal entries are exchangeable; with permuted
    # seeds they agree within 4 combined standard errors
    V = soft_quartic(0.5)
    a = estimate_hessian((0.0, 0.0), 6, V, 12, NoiseSource(seed=5))
    b = estimate_hessian((0.0, 0.0), 6, V, 12, NoiseSource(seed=6))
    gap = abs(a.matrix[0, 0] - b.matrix[1, 1])
    se = np.hypot(a.stderr[0, 0], b.stderr[1, 1])
    assert gap <= 4 * se


def test_variance_jackknife_null():
    var, se = variance_with_jackknife(np.full(16, 0.37))
    assert var == 0.0 and se == 0.0


def test_flux_decay_variance_decreases():
    res = flux_decay_experiment([2, 4, 8], 16, soft_quartic(0.5), 64,
                                NoiseSource(seed=7), horizon=96.0)
    assert np.all(np.diff(res.flux_variance) < 0)
    assert res.exponent < -0.8
    assert np.all(np.diff(res.gradient_variance) < 0)


def test_flux_decay_needs_three_scales():
    with pytest.raises(ValueError):
        flux_decay_experiment([2, 4], 8, quadratic(), 8, NoiseSource(seed=8))


def test_slope_stability_identical_paths():
    rep = slope_stability_check((0.2, 0.1), (0.2, 0.1), 6, soft_quartic(0.5),
                                NoiseSource(seed=9))
    assert rep.lhs == 0.0
    assert rep.fitted_constant == 0.0


def test_slope_stability_quadratic_matches_linear_solver():
    # for the quadratic potential the tilt does not enter the drift, so the
    # coupled difference solves the heat equation with the (divergence-free)
    # constant forcing and vanishes identically, matching the solver output
    rep = slope_stability_check((0.3, 0.0), (0.0, 0.2), 6, quadratic(),
                                NoiseSource(seed=10))
    assert rep.lhs <= 1e-10


def test_slope_stability_fitted_constant_bounded():
    rng = np.random.default_rng(11)
    V = soft_quartic(0.5)
    worst = 0.0
    for k in range(10):
        q1 = tuple(rng.uniform(-1, 1, size=2))
        q2 = tuple(rng.uniform(-1, 1, size=2))
        rep = slope_stability_check(q1, q2, 8, V, NoiseSource(seed=100 + k))
        worst = max(worst, rep.fitted_constant)
    assert worst <= 5.0


def test_linearization_modulus_quadratic_vanishes():
    mod = linearization_modulus((0.1, 0.0), [(0.5, 0.0), (0.2, 0.3)], 6,
                                quadratic(), NoiseSource(seed=12), replicas=3)
    assert np.max(mod.residuals) <= 1e-10


def test_linearization_modulus_zero_gap():
    mod = linearization_modulus((0.2, 0.1), [(0.2, 0.1)], 6, soft_quartic(0.5),
                                NoiseSource(seed=13), replicas=3)
    assert mod.residuals[0] <= 1e-14


# ---------------------------------------------------------------------------
# two-scale expansion
# ---------------------------------------------------------------------------

def _sine_datum(t, pts):
    return np.exp(t) * np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])


@pytest.fixture(scope="module")
def small_expansion():
    V = quadratic()
    dom = DirichletDomain(2, 8)
    ubar = solve_homogenized(EffectiveGradient.identity(), dom, _sine_datum,
                             dt_unit=stable_dt(V, 2), record_stride=16)
    pack = make_correctors(ubar, 0.25, V, NoiseSource(seed=14))
    return ubar, pack, build_two_scale(ubar, 0.25, pack, V)


def test_partition_sums_to_one():
    dom = DirichletDomain(2, 8)
    centers, chi = partition_of_unity(dom, 0.25)
    total = chi.sum(axis=0)
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_two_scale_zero_correctors_reduce_to_ubar(small_expansion):
    ubar, pack, _ = small_expansion
    zero_pack = (pack[0], pack[1], pack[2],
                 [SpaceTimeField(t.grid, t.t0, t.dt, np.zeros_like(t.values))
                  for t in pack[3]],
                 pack[4], pack[5])
    exp0 = build_two_scale(ubar, 0.25, zero_pack, quadratic())
    assert np.max(np.abs(exp0.w - ubar.values)) == 0.0


def test_two_scale_product_rule_identity(small_expansion):
    # grad w - sum chi_bar grad v_y equals the mismatch-plus-eps-grad-chi
    # terms exactly, at every recorded slice and axis
    ubar, pack, exp = small_expansion
    centers, chi, xi, corr, origins, _ = pack
    dom = ubar.grid
    eps = dom.mesh
    d = 2
    j = ubar.nslices // 2
    t = ubar.times[j]
    for ax in range(d):
        idx = [slice(None)] * d
        idx[ax] = slice(0, dom.shape[ax] - 1)
        g_ub = np.zeros(dom.shape)
        g_ub[tuple(idx)] = np.diff(ubar.values[j], axis=ax) / eps
        term = g_ub.copy()
        for i in range(len(centers)):
            term -= _edge_average(chi[i], ax) * xi[i].at(t)[ax]
            gchi = np.zeros(dom.shape)
            gchi[tuple(idx)] = np.diff(chi[i], axis=ax) / eps
            tr = corr[i]
            sl = tr.values[tr.slice_index(np.clip(t / (eps * eps), tr.t0, tr.t1))]
            full = np.zeros(dom.shape)
            lo = origins[i] - tr.grid.radius
            hi = origins[i] + tr.grid.radius
            lo_c = np.maximum(lo, 0)
            hi_c = np.minimum(hi, dom.resolution)
            dom_sel = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo_c, hi_c))
            box_sel = tuple(slice(int(a - l), int(b - l) + 1)
                            for a, b, l in zip(lo_c, hi_c, lo))
            full[dom_sel] = sl[box_sel]
            term += eps * _edge_average(full, ax) * gchi
        assert np.max(np.abs(term - exp.gradient_remainder[j, ax])) < 1e-12


def test_error_terms_affine_profile():
    # affine effective solution with zero correctors: the gradient-mismatch
    # and tilt-difference summands vanish at interior cells
    V = quadratic()
    dom = DirichletDomain(2, 8)
    eps = dom.mesh
    kappa = 0.25
    pts = dom.coordinates * eps
    vals = np.broadcast_to(0.4 * pts[..., 0] - 0.1 * pts[..., 1],
                           (33,) + dom.shape).copy()
    ubar = SpaceTimeField(dom, -1.0, 1.0 / 32, vals)
    pack = make_correctors(ubar, kappa, V, NoiseSource(seed=15))
    zero_pack = (pack[0], pack[1], pack[2],
                 [SpaceTimeField(t.grid, t.t0, t.dt, np.zeros_like(t.values))
                  for t in pack[3]],
                 pack[4], pack[5])
    exp = build_two_scale(ubar, kappa, zero_pack, V)
    first, second, third = error_terms(exp, (-0.25, np.array([0.5, 0.5])))
    assert first < 1e-12
    assert second < 1e-12
    assert third == 0.0


def test_error_terms_identical_slopes_zero_gap(small_expansion):
    _, _, exp = small_expansion
    # overwrite all tilt paths with one constant: the difference summand dies
    const = SlopePath(np.array([-1.0]), np.array([[0.3, -0.2]]))
    frozen = type(exp)(exp.ubar, exp.kappa, exp.centers, exp.chi,
                       [const] * len(exp.centers), exp.correctors,
                       exp.micro_origin, exp.w, exp.gradient_remainder,
                       exp.L_micro)
    _, second, _ = error_terms(frozen, (-0.25, np.array([0.5, 0.5])))
    assert second == 0.0


def test_flux_weak_norm_zero_correctors_quadratic(small_expansion):
    ubar, pack, _ = small_expansion
    const = SlopePath(np.array([-1.0]), np.array([[0.3, -0.2]]))
    zero_pack = (pack[0], pack[1], [const] * len(pack[0]),
                 [SpaceTimeField(t.grid, t.t0, t.dt, np.zeros_like(t.values))
                  for t in pack[3]],
                 pack[4], pack[5])
    exp0 = build_two_scale(ubar, 0.25, zero_pack, quadratic())
    val = flux_weak_norm(exp0, EffectiveGradient.identity(), quadratic())
    assert val == 0.0


def test_make_correctors_requires_commensurate_mesoscale():
    dom = DirichletDomain(2, 8)
    vals = np.zeros((9,) + dom.shape)
    ubar = SpaceTimeField(dom, -1.0, 1.0 / 8, vals)
    with pytest.raises(ValueError):
        make_correctors(ubar, 0.3, quadratic(), NoiseSource(seed=16))


# ---------------------------------------------------------------------------
# excess decay
# ---------------------------------------------------------------------------

def test_excess_decay_affine_is_zero():
    grid = make_torus(2, 16)
    coords = grid.coordinates
    vals = np.broadcast_to(0.7 * coords[..., 0] - 0.3 * coords[..., 1] + 2.0,
                           (65,) + grid.shape).copy()
    u = SpaceTimeField(grid, -256.0, 4.0, vals)
    prof = excess_decay(u, [4, 8, 16])
    assert np.max(prof.excess) < 1e-12


def test_excess_decay_spike_scaling():
    # affine plus a single-site single-slice spike: the least-squares
    # residual scales like l^(-2 - d/2)
    grid = make_torus(2, 16)
    coords = grid.coordinates
    nsl = 257
    u_vals = np.broadcast_to(0.1 * coords[..., 0],
                             (nsl,) + grid.shape).copy()
    u_vals[-1, grid.radius, grid.radius] += 1.0
    u = SpaceTimeField(grid, -256.0, 1.0, u_vals)
    prof = excess_decay(u, [4, 8, 16])
    from gradphi.harness import fit_power_law

    fit = fit_power_law(prof.scales, prof.excess)
    assert abs(fit.exponent - (-3.0)) < 0.1  # d = 2: -2 - d/2 = -3
    assert np.max(prof.excess) > 0


def test_excess_decay_validates_scales():
    grid = make_torus(2, 8)
    u = SpaceTimeField(grid, -64.0, 1.0, np.zeros((65,) + grid.shape))
    with pytest.raises(ValueError):
        excess_decay(u, [2, 4])
    with pytest.raises(ValueError):
        excess_decay(u, [4, 16])


def test_tabulate_effective_gradient_quadratic_near_identity():
    from gradphi.homogenize import tabulate_effective_gradient

    Ds = tabulate_effective_gradient(quadratic(), 6, 24, NoiseSource(seed=17),
                                     knots=[0.0, 0.5, 1.0])
    probe = np.array([0.5, -1.0])
    out = Ds(probe)
    assert np.max(np.abs(out - probe)) < 0.05
    assert Ds.lipschitz < 1.3


def test_sim_config_resolves_stable_step():
    from gradphi.dynamics import SimConfig

    cfg = SimConfig(potential={"kind": "soft_quartic", "a": 0.5},
                    grid={"d": 2, "L": 8}, horizon=16.0)
    assert cfg.resolved_dt() == pytest.approx(1.0 / 24.0)
    bad = SimConfig(potential={"kind": "quadratic"}, grid={"d": 2, "L": 8},
                    horizon=1.0, dt=0.2)
    with pytest.raises(ValueError):
        bad.resolved_dt()


def test_hessian_tilt_sign_symmetry_and_bounds():
    # symmetric potential: estimates at p and -p agree within 4 combined SE;
    # at zero tilt the diagonal sits inside the convexity window and the
    # off-diagonal entries are compatible with zero
    V = soft_quartic(0.5)
    plus = estimate_hessian((0.4, 0.0), 6, V, 12, NoiseSource(seed=18))
    minus = estimate_hessian((-0.4, 0.0), 6, V, 12, NoiseSource(seed=19))
    gap = np.abs(plus.matrix - minus.matrix)
    comb = np.hypot(plus.stderr, minus.stderr)
    assert np.all(gap <= 4 * comb)

    zero = estimate_hessian((0.0, 0.0), 6, V, 12, NoiseSource(seed=20))
    diag = np.diag(zero.matrix)
    assert np.all(diag >= V.c_minus - 0.1) and np.all(diag <= V.c_plus + 0.1)
    off = zero.matrix[0, 1], zero.matrix[1, 0]
    se_off = zero.stderr[0, 1], zero.stderr[1, 0]
    assert all(abs(o) <= 4 * s for o, s in zip(off, se_off))


@pytest.mark.slow
def test_error_aggregate_decreases_with_mesh():
    # halving the mesh at the square-root mesoscale rule shrinks the mean
    # squared cell error of the expansion (non-quadratic potential)
    from gradphi.homogenize import error_terms_aggregate, tabulate_effective_gradient

    V = soft_quartic(0.5)
    Ds = tabulate_effective_gradient(V, 6, 16, NoiseSource(seed=21),
                                     knots=[0.0, 0.5, 1.0, 1.5])
    aggregates = []
    for N in (8, 16):
        eps = 1.0 / N
        dom = DirichletDomain(2, N)
        kappa = round(np.sqrt(eps) / eps) * eps
        ubar = solve_homogenized(Ds, dom, _sine_datum,
                                 dt_unit=stable_dt(V, 2), record_stride=16)
        pack = make_correctors(ubar, kappa, V, NoiseSource(seed=22))
        exp = build_two_scale(ubar, kappa, pack, V)
        aggregates.append(error_terms_aggregate(exp))
    assert aggregates[1] < aggregates[0]


@pytest.mark.slow
def test_flux_weak_norm_decreases_with_mesh():
    # with the exact effective gradient (equal to the flux expectation for
    # the quadratic potential) the negative-norm flux error shrinks from
    # mesh 1/8 to mesh 1/16, averaged over 20 replicas
    V = quadratic()
    vals = {}
    for N in (8, 16):
        eps = 1.0 / N
        dom = DirichletDomain(2, N)
        kappa = round(np.sqrt(eps) / eps) * eps
        ubar = solve_homogenized(EffectiveGradient.identity(), dom,
                                 _sine_datum, dt_unit=stable_dt(V, 2),
                                 record_stride=16)
        per_rep = []
        for rep in range(20):
            pack = make_correctors(ubar, kappa, V,
                                   NoiseSource(seed=23, replica=rep))
            exp = build_two_scale(ubar, kappa, pack, V)
            per_rep.append(flux_weak_norm(exp, EffectiveGradient.identity(), V))
        vals[N] = float(np.mean(per_rep))
    assert vals[16] < vals[8]
