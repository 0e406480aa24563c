"""Surface-tension estimators, concentration experiments, and the two-scale
expansion.

Everything here is replica-averaged measurement on top of the dynamics
module: flux means and their derivatives (the effective nonlinearity and
its Hessian), decay of window averages, slope-coupling residuals, and the
assembly of the corrected effective solution with its error terms.  All
estimates carry standard errors and acceptance comparisons happen at stated
multiples of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    SlopePath,
    as_slope_path,
    evolve_torus,
    run_corrector,
    sample_gff,
    stable_dt,
)
from .lattice import (
    DirichletDomain,
    ParabolicCylinder,
    SpaceTimeField,
    TorusGrid,
    make_torus,
)
from .noise import NoiseSource
from .norms import hminus1_par_multiscale, lp_norm
from .parabolic import EffectiveGradient, solve_linearized_corrector
from .potential import Potential


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------

@dataclass
class FluxEstimate:
    slope: object
    window_radius: int
    replicas: int
    mean: np.ndarray  # (d,)
    stderr: np.ndarray  # (d,)
    samples: np.ndarray | None = None  # (replicas, d)


@dataclass
class HessianEstimate:
    slope: np.ndarray
    matrix: np.ndarray  # (d, d)
    stderr: np.ndarray  # (d, d)
    eigenvalues: np.ndarray = field(init=False)
    positive: bool = field(init=False)

    def __post_init__(self):
        sym = 0.5 * (self.matrix + self.matrix.T)
        self.eigenvalues = np.linalg.eigvalsh(sym)
        self.positive = bool(self.eigenvalues.min() > 0)


@dataclass
class ModulusEstimate:
    gaps: np.ndarray  # |p - q| per probe
    residuals: np.ndarray  # mean L2 residual per probe
    stderr: np.ndarray


@dataclass
class ExcessProfile:
    scales: np.ndarray
    excess: np.ndarray  # E1(l)
    gradient_bound: np.ndarray  # (1/l) || u - (u)_{Q_l} ||


@dataclass
class FluxDecayResult:
    scales: np.ndarray
    flux_variance: np.ndarray
    flux_variance_se: np.ndarray
    gradient_variance: np.ndarray
    exponent: float
    r_squared: float
    samples: dict


def variance_with_jackknife(samples: np.ndarray) -> tuple[float, float]:
    """Sample variance of scalar samples with its delete-one jackknife SE."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n < 3:
        raise ValueError("need at least three samples for a jackknife error")
    full = samples.var(ddof=1)
    total = samples.sum()
    sq_total = (samples**2).sum()
    loo_mean = (total - samples) / (n - 1)
    loo_var = (sq_total - samples**2 - (n - 1) * loo_mean**2) / (n - 2)
    se = np.sqrt((n - 1) / n * ((loo_var - loo_var.mean()) ** 2).sum())
    return float(full), float(se)


# ---------------------------------------------------------------------------
# windowed flux accumulation
# ---------------------------------------------------------------------------

class _WindowAccumulator:
    """Running space-time averages of flux and gradient over trailing windows.

    For each requested radius r, accumulates the vector averages of
    V'(q + grad phi) and of grad phi over (-r^2, 0] x Lambda_r while the
    dynamics runs; slices enter with unit weight (rectangle rule on the
    integration grid).
    """

    def __init__(self, grid: TorusGrid, V: Potential, path: SlopePath | None,
                 radii, n_batch: int, dt: float):
        self.grid = grid
        self.V = V
        self.path = path
        self.radii = list(radii)
        self.dt = dt
        d = grid.dim
        self.flux_acc = {r: np.zeros((n_batch, d)) for r in self.radii}
        self.grad_acc = {r: np.zeros((n_batch, d)) for r in self.radii}
        self.counts = {r: 0 for r in self.radii}
        # per radius and axis: index tuples for the box and the box shifted
        # one site forward along that axis (gradients gathered box-locally)
        self.boxes = {}
        self.boxes_shifted = {}
        side = grid.side
        for r in self.radii:
            offs = [(np.arange(-r, r + 1) + grid.radius) % side
                    for _ in range(d)]
            self.boxes[r] = np.ix_(*offs)
            shifted = []
            for ax in range(d):
                offs_ax = [o.copy() for o in offs]
                offs_ax[ax] = (offs_ax[ax] + 1) % side
                shifted.append(np.ix_(*offs_ax))
            self.boxes_shifted[r] = shifted

    def __call__(self, k: int, t: float, state: np.ndarray):
        q = self.path.at(t) if self.path is not None else None
        d = self.grid.dim
        lead = (slice(None),)
        for r in self.radii:
            if t < -(r * r) - 1e-9:
                continue
            box = lead + self.boxes[r]
            for ax in range(d):
                g = state[lead + self.boxes_shifted[r][ax]] - state[box]
                if q is not None and q[ax] != 0.0:
                    self.flux_acc[r][:, ax] += self.V.vp(g + q[ax]).mean(
                        axis=tuple(range(1, g.ndim)))
                else:
                    self.flux_acc[r][:, ax] += self.V.vp(g).mean(
                        axis=tuple(range(1, g.ndim)))
                self.grad_acc[r][:, ax] += g.mean(axis=tuple(range(1, g.ndim)))
            self.counts[r] += 1

    def averages(self, r) -> tuple[np.ndarray, np.ndarray]:
        c = max(self.counts[r], 1)
        return self.flux_acc[r] / c, self.grad_acc[r] / c


# ---------------------------------------------------------------------------
# surface-tension estimators
# ---------------------------------------------------------------------------

def estimate_tau(
    slope,
    L: int,
    V: Potential,
    replicas: int,
    src: NoiseSource,
    d: int = 2,
    dt: float | None = None,
    window_radius: int | None = None,
    init: str = "auto",
    keep_samples: bool = False,
) -> FluxEstimate:
    """Replica mean of the flux average over the trailing half-size window.

    `slope` is a constant tilt or a SlopePath.  Constant tilts start from
    the equilibrated dynamic (exact free-field sample for the quadratic
    potential, burn-in of L^2 otherwise); time-dependent tilts start the
    dynamic from zero and run a horizon of L^2.  init="zero" forces the
    zero start (used to compare the two routes on identical noise).
    """
    if replicas < 2:
        raise ValueError("need at least two replicas")
    grid = make_torus(d, L)
    dt = stable_dt(V, d) if dt is None else dt
    r = L // 2 if window_radius is None else window_radius
    window = float(r * r)

    constant = not isinstance(slope, SlopePath)
    if init == "auto":
        init = "stationary" if constant else "zero"

    if init == "stationary" and V.name == "quadratic":
        horizon = window
        start = sample_gff(grid, src, replicas=np.arange(replicas))
    elif init == "stationary":
        horizon = window + float(L * L)  # burn-in of L^2 before the window
        start = np.zeros(grid.shape)
    else:
        horizon = max(float(L * L), window)
        start = np.zeros(grid.shape)

    n_steps = int(round(horizon / dt))
    t0 = -n_steps * dt
    path = as_slope_path(slope, d, t_start=t0)
    acc = _WindowAccumulator(grid, V, path, [r], replicas, dt)
    evolve_torus(grid, V, path, src, t0, n_steps, dt, start,
                 replicas=np.arange(replicas), on_step=acc)
    flux, _ = acc.averages(r)
    mean = flux.mean(axis=0)
    se = flux.std(axis=0, ddof=1) / np.sqrt(replicas)
    return FluxEstimate(slope, r, replicas, mean, se,
                        samples=flux if keep_samples else None)


def estimate_hessian(
    p,
    L: int,
    V: Potential,
    replicas: int,
    src: NoiseSource,
    d: int = 2,
    dt: float | None = None,
) -> HessianEstimate:
    """Derivative of the flux mean with respect to the tilt.

    Entry (i, j) averages V''(tilted gradient) (e_i + grad w_i) over the
    edges in direction j of the trailing half-size window, where w_i is the
    linearized response to tilt direction e_i; replica means with SEs.
    """
    grid = make_torus(d, L)
    dt = stable_dt(V, d) if dt is None else dt
    pv = np.asarray(p, dtype=float)
    r = L // 2
    window = float(r * r)
    box = grid.box_slices(r)

    from .dynamics import run_stationary_periodic

    entries = np.zeros((replicas, d, d))
    for rep in range(replicas):
        src_r = src.with_replica(src.replica + rep)
        traj = run_stationary_periodic(grid, pv, V, src_r, horizon=float(L * L),
                                       dt=dt, record_stride=1)
        j0 = traj.slice_index(-window)
        for i in range(d):
            w = solve_linearized_corrector(traj, pv, np.eye(d)[i], V)
            acc = np.zeros(d)
            count = 0
            for j in range(j0, traj.nslices):
                phi_s = traj.values[j]
                w_s = w.values[j]
                for ax in range(d):
                    gphi = np.roll(phi_s, -1, axis=ax) - phi_s + pv[ax]
                    gw = np.roll(w_s, -1, axis=ax) - w_s + (1.0 if ax == i else 0.0)
                    acc[ax] += (V.vpp(gphi)[box] * gw[box]).mean()
                count += 1
            entries[rep, i] = acc / count
    mean = entries.mean(axis=0)
    se = entries.std(axis=0, ddof=1) / np.sqrt(replicas)
    return HessianEstimate(pv, mean, se)


def tabulate_effective_gradient(
    V: Potential,
    L: int,
    replicas: int,
    src: NoiseSource,
    knots=None,
    d: int = 2,
) -> EffectiveGradient:
    """Tabulated effective nonlinearity from axis-aligned flux means.

    Evaluates the flux mean at tilts s e_1 over the nonnegative knot grid
    (lattice symmetry reduces general tilts to componentwise evaluations,
    odd in the tilt), then interpolates monotonically.  The quarter-step
    grid up to 1.5 is the default.
    """
    if knots is None:
        knots = np.arange(0.0, 1.5 + 1e-9, 0.25)
    knots = np.asarray(knots, dtype=float)
    values = [0.0]
    for i, s in enumerate(knots[1:]):
        tilt = np.zeros(d)
        tilt[0] = s
        est = estimate_tau(tuple(tilt), L, V, replicas,
                           src.with_replica(src.replica + (i + 1) * replicas))
        values.append(float(est.mean[0]))
    return EffectiveGradient.from_axis_table(knots, np.asarray(values))


# ---------------------------------------------------------------------------
# decay and fluctuation experiments
# ---------------------------------------------------------------------------

def flux_decay_experiment(
    ells,
    L: int,
    V: Potential,
    replicas: int,
    src: NoiseSource,
    d: int = 2,
    slope=None,
    horizon: float | None = None,
    dt: float | None = None,
    threads: int | None = None,
) -> FluxDecayResult:
    """Variance of window flux averages against the window size.

    Runs the zero-started dynamic once per replica batch and accumulates
    the flux and gradient averages over trailing windows of every requested
    radius; the decay exponent is the log-log slope of the total variance.
    Replica chunks may run on worker threads; results do not depend on the
    chunking.
    """
    ells = sorted(int(e) for e in ells)
    if len(ells) < 3:
        raise ValueError("need at least three window sizes for a decay fit")
    if ells[-1] > L:
        raise ValueError("windows must fit in the torus")
    grid = make_torus(d, L)
    dt = stable_dt(V, d) if dt is None else dt
    if horizon is None:
        horizon = float(ells[-1] ** 2 + 64)
    n_steps = int(round(horizon / dt))
    t0 = -n_steps * dt
    path = as_slope_path(slope, d, t_start=t0)

    n_chunks = max(int(threads or 1), 1)
    chunk_ids = [ids for ids in np.array_split(np.arange(replicas), n_chunks)
                 if len(ids)]

    def run_chunk(ids):
        acc = _WindowAccumulator(grid, V, path, ells, len(ids), dt)
        evolve_torus(grid, V, path, src, t0, n_steps, dt, np.zeros(grid.shape),
                     replicas=ids, on_step=acc)
        return acc

    if len(chunk_ids) == 1:
        accs = [run_chunk(chunk_ids[0])]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=len(chunk_ids)) as pool:
            accs = list(pool.map(run_chunk, chunk_ids))

    flux_var, flux_se, grad_var = [], [], []
    samples = {}
    for e in ells:
        parts = [acc.averages(e) for acc in accs]
        flux = np.vstack([p[0] for p in parts])
        gradv = np.vstack([p[1] for p in parts])
        samples[e] = flux
        var_components = []
        se_sq = 0.0
        for ax in range(d):
            v, se = variance_with_jackknife(flux[:, ax])
            var_components.append(v)
            se_sq += se**2
        flux_var.append(float(np.sum(var_components)))
        flux_se.append(float(np.sqrt(se_sq)))
        grad_var.append(float(sum(gradv[:, ax].var(ddof=1) for ax in range(d))))
    from .harness import fit_power_law

    fit = fit_power_law(np.asarray(ells, dtype=float), np.asarray(flux_var))
    return FluxDecayResult(np.asarray(ells, dtype=float), np.asarray(flux_var),
                           np.asarray(flux_se), np.asarray(grad_var),
                           fit.exponent, fit.r_squared, samples)


@dataclass
class FluctuationResult:
    sizes: np.ndarray
    center_variance: np.ndarray
    center_variance_se: np.ndarray
    l2_norm_sq: np.ndarray  # mean of the averaged squared L2 norm
    grad_q999: np.ndarray  # empirical 99.9th percentile of |grad phi|


def site_variance_with_jackknife(final: np.ndarray) -> tuple[float, float]:
    """Site-averaged per-site variance over replicas, with delete-one SE.

    Every site estimates the same translation-invariant variance; averaging
    the per-site sample variances sharpens the estimate, and the jackknife
    over replicas accounts for the spatial correlations.
    """
    n = final.shape[0]
    flat = final.reshape(n, -1)
    if n < 3:
        raise ValueError("need at least three replicas")
    mean = flat.mean(axis=0)
    sq = (flat**2).sum(axis=0)
    full = float(((sq - n * mean**2) / (n - 1)).mean())
    total = flat.sum(axis=0)
    loo_mean = (total[None, :] - flat) / (n - 1)
    loo_var = (sq[None, :] - flat**2 - (n - 1) * loo_mean**2) / (n - 2)
    loo = loo_var.mean(axis=1)
    se = float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))
    return full, se


def corrector_fluctuation_experiment(
    Ls,
    V: Potential,
    replicas: int,
    src: NoiseSource,
    d: int = 2,
    dt: float | None = None,
    stationary_window: float = 8.0,
) -> FluctuationResult:
    """Site variance, averaged L2 mass, and gradient tail per size.

    The quadratic dynamic starts from an exact free-field sample, under
    which the law of the final slice equals the law at the end of the full
    zero-started L^2 window (the slow modes have relaxed by time L^2 up to
    a relative error below 1e-8), so a short stationary run suffices.
    Non-quadratic potentials start from zero over the full L^2 window.
    The variance estimator averages the per-site sample variances.
    """
    dt_user = dt
    sizes, var_c, var_se, l2m, gq = [], [], [], [], []
    for L in Ls:
        grid = make_torus(d, int(L))
        dt = stable_dt(V, d) if dt_user is None else dt_user
        reps = np.arange(replicas)
        if V.name == "quadratic":
            horizon = min(float(L * L), stationary_window)
            start = sample_gff(grid, src, tag=int(L), replicas=reps)
        else:
            horizon = float(L * L)
            start = np.zeros(grid.shape)
        n_steps = int(round(horizon / dt))
        t0 = -n_steps * dt

        sq_acc = np.zeros(replicas)
        count = 0

        def on_step(k, t, state):
            nonlocal count
            sq_acc[:] += (state.reshape(replicas, -1) ** 2).mean(axis=1)
            count += 1

        final, _ = evolve_torus(grid, V, None, src, t0, n_steps, dt, start,
                                replicas=reps, on_step=on_step)
        v, se = site_variance_with_jackknife(final)
        grads = np.concatenate([
            np.abs(np.roll(final, -1, axis=1 + ax) - final).ravel()
            for ax in range(d)
        ])
        sizes.append(float(L))
        var_c.append(v)
        var_se.append(se)
        l2m.append(float(sq_acc.mean() / max(count, 1)))
        gq.append(float(np.quantile(grads, 0.999)))
    return FluctuationResult(np.asarray(sizes), np.asarray(var_c),
                             np.asarray(var_se), np.asarray(l2m), np.asarray(gq))


# ---------------------------------------------------------------------------
# slope coupling and linearization
# ---------------------------------------------------------------------------

@dataclass
class SlopeStabilityReport:
    lhs: float
    slope_gap: float
    size_term: float
    fitted_constant: float


def slope_stability_check(q1, q2, L: int, V: Potential, src: NoiseSource,
                          d: int = 2, dt: float | None = None) -> SlopeStabilityReport:
    """Coupled-trajectory gradient distance against the tilt-gap bound.

    Both dynamics run on the same torus with identical Brownian increments;
    the report compares || grad phi_1 - grad phi_2 || over the trailing
    half-window with C |q1 - q2| + (1/L)(||phi_1|| + ||phi_2||) and returns
    the fitted constant.
    """
    grid = make_torus(d, L)
    dt = stable_dt(V, d) if dt is None else dt
    horizon = float(L * L)
    path1 = as_slope_path(q1, d, t_start=-horizon)
    path2 = as_slope_path(q2, d, t_start=-horizon)
    f1 = run_corrector(grid, horizon, path1, V, src, dt=dt)
    f2 = run_corrector(grid, horizon, path2, V, src, dt=dt)
    r = L // 2
    window = ParabolicCylinder(-float(r * r), 0.0, radius=r)

    j0, j1 = f1.time_window(window.t_lo, window.t_hi)
    box = grid.box_slices(r)
    acc = 0.0
    n = 0
    for j in range(j0, j1 + 1):
        diff = f1.values[j] - f2.values[j]
        for ax in range(d):
            g = (np.roll(diff, -1, axis=ax) - diff)[box]
            acc += (g**2).mean()
        n += 1
    lhs = float(np.sqrt(acc / n))

    ts = f1.times
    gaps = np.array([np.linalg.norm(path1.at(t) - path2.at(t)) for t in ts[:-1]])
    slope_gap = float(np.sqrt((gaps**2).mean()))
    size_term = (lp_norm(f1, p=2) + lp_norm(f2, p=2)) / L
    fitted = 0.0
    if slope_gap > 1e-14:
        fitted = max(lhs - size_term, 0.0) / slope_gap
    return SlopeStabilityReport(lhs, slope_gap, size_term, fitted)


def linearization_modulus(
    p,
    qs,
    L: int,
    V: Potential,
    src: NoiseSource,
    replicas: int,
    d: int = 2,
    dt: float | None = None,
    chunk: int = 16,
) -> ModulusEstimate:
    """Residual of the first-order tilt expansion, per tilt gap.

    For each probe tilt q, couples the dynamics at p and q through the same
    noise, solves the linearized equation along the p-trajectory, and
    measures || grad phi_q - grad phi_p - grad w || over the cylinder.
    """
    grid = make_torus(d, L)
    dt = stable_dt(V, d) if dt is None else dt
    pv = np.asarray(p, dtype=float)
    qs = [np.asarray(q, dtype=float) for q in qs]
    horizon = float(L * L)
    n_steps = int(round(horizon / dt))
    t0 = -n_steps * dt

    res = np.zeros((replicas, len(qs)))
    for lo in range(0, replicas, chunk):
        ids = np.arange(lo, min(lo + chunk, replicas))
        _, rec_p = evolve_torus(grid, V, as_slope_path(pv, d, t_start=t0), src,
                                t0, n_steps, dt, np.zeros(grid.shape),
                                replicas=ids, record_stride=1)
        recs_q = []
        for q in qs:
            _, rq = evolve_torus(grid, V, as_slope_path(q, d, t_start=t0), src,
                                 t0, n_steps, dt, np.zeros(grid.shape),
                                 replicas=ids, record_stride=1)
            recs_q.append(rq)
        for b, rep in enumerate(ids):
            traj_p = SpaceTimeField(grid, t0, dt, rec_p[:, b])
            for iq, q in enumerate(qs):
                w = solve_linearized_corrector(traj_p, pv, q - pv, V)
                diff = recs_q[iq][:, b] - traj_p.values - w.values
                acc = 0.0
                for ax in range(d):
                    g = np.roll(diff, -1, axis=1 + ax) - diff
                    acc += (g**2).mean()
                res[rep, iq] = np.sqrt(acc)
    gaps = np.array([np.linalg.norm(q - pv) for q in qs])
    return ModulusEstimate(gaps, res.mean(axis=0),
                           res.std(axis=0, ddof=1) / np.sqrt(replicas))


# ---------------------------------------------------------------------------
# two-scale expansion
# ---------------------------------------------------------------------------

def _bspline_bump(u: np.ndarray) -> np.ndarray:
    """Cubic B-spline kernel: C^2, piecewise cubic, supported on [-2, 2]."""
    au = np.abs(u)
    out = np.zeros_like(au)
    inner = au <= 1.0
    outer = (au > 1.0) & (au < 2.0)
    out[inner] = (4.0 - 6.0 * au[inner] ** 2 + 3.0 * au[inner] ** 3) / 6.0
    out[outer] = (2.0 - au[outer]) ** 3 / 6.0
    return out


@dataclass
class TwoScaleExpansion:
    ubar: SpaceTimeField
    kappa: float
    centers: np.ndarray  # (nY, d) physical coordinates
    chi: np.ndarray  # (nY, *dom.shape), sums to one on the interior
    xi: list  # per center: SlopePath in macroscopic time
    correctors: list  # per center: SpaceTimeField on the microscopic box
    micro_origin: np.ndarray  # (nY, d) integer centers of the micro boxes
    w: np.ndarray  # (nslices, *dom.shape) assembled field
    gradient_remainder: np.ndarray  # (nslices, d, *dom.shape)
    L_micro: int


def partition_of_unity(dom: DirichletDomain, kappa: float):
    """Tensor cubic-spline bumps on the kappa-grid, normalized pointwise."""
    step = kappa
    n_per_axis = int(np.floor(1.0 / step + 1e-9)) + 1
    axes = [np.arange(n_per_axis) * step for _ in range(dom.dim)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
    pts = dom.coordinates * dom.mesh  # physical positions, (*shape, d)
    chi = np.empty((len(centers),) + dom.shape)
    for i, y in enumerate(centers):
        w = np.ones(dom.shape)
        for ax in range(dom.dim):
            w = w * _bspline_bump((pts[..., ax] - y[ax]) / kappa)
        chi[i] = w
    total = chi.sum(axis=0)
    total[total == 0.0] = 1.0
    chi /= total
    return centers, chi


def local_slopes(ubar: SpaceTimeField, kappa: float, centers: np.ndarray):
    """Per-center piecewise-constant tilt from windowed gradient averages.

    Window for the cell ending at t_c at center y: (t_c - 4 kappa^2, t_c)
    times the box of half-width 2 kappa around y.  Cells within kappa of
    the lateral boundary, or whose window leaves the time range, fall back
    to tilt zero.
    """
    dom: DirichletDomain = ubar.grid
    eps = dom.mesh
    d = dom.dim
    pts = dom.coordinates * eps
    n_cells = max(int(np.ceil(1.0 / (kappa * kappa))), 1)
    cell_edges = [max(-1.0, -(j + 1) * kappa**2) for j in range(n_cells)]
    paths = []
    for y in centers:
        near_boundary = min(float(np.min(y)), float(np.min(1.0 - y))) < kappa
        bps, vals = [], []
        for j in range(n_cells - 1, -1, -1):
            t_hi = -j * kappa**2
            t_lo = cell_edges[j]
            if near_boundary or (t_hi - 4 * kappa**2) < -1.0:
                xi = np.zeros(d)
            else:
                xi = _window_gradient_average(ubar, pts, y, 2 * kappa,
                                              t_hi - 4 * kappa**2, t_hi)
            bps.append(t_lo)
            vals.append(xi)
        paths.append(SlopePath(np.asarray(bps), np.asarray(vals)))
    return paths


def _window_gradient_average(ubar, pts, y, half_width, t_lo, t_hi):
    dom: DirichletDomain = ubar.grid
    eps = dom.mesh
    d = dom.dim
    mask = np.ones(dom.shape, dtype=bool)
    for ax in range(d):
        mask &= np.abs(pts[..., ax] - y[ax]) <= half_width + 1e-12
    # forward gradients exist where the shifted site stays on the grid
    j0, j1 = ubar.time_window(max(t_lo, ubar.t0), min(t_hi, ubar.t1))
    out = np.zeros(d)
    for ax in range(d):
        sel = mask.copy()
        idx = [slice(None)] * d
        idx[ax] = slice(0, dom.shape[ax] - 1)
        valid = np.zeros(dom.shape, dtype=bool)
        valid[tuple(idx)] = True
        sel &= valid
        vals = 0.0
        for j in range(j0, j1 + 1):
            g = np.diff(ubar.values[j], axis=ax) / eps
            gfull = np.zeros(dom.shape)
            gfull[tuple(idx)] = g
            vals += gfull[sel].mean()
        out[ax] = vals / (j1 - j0 + 1)
    return out


def make_correctors(ubar: SpaceTimeField, kappa: float, V: Potential,
                    src: NoiseSource, dt: float | None = None):
    """Run one microscopic corrector per partition cell.

    Boxes have radius 2 floor(kappa/eps) around the rescaled centers; the
    noise is keyed by absolute lattice coordinates, so overlapping boxes
    share their Brownian motions.  Corrector trajectories are recorded at
    the macroscopic recording resolution of `ubar`.
    """
    dom: DirichletDomain = ubar.grid
    eps = dom.mesh
    d = dom.dim
    ratio = kappa / eps
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("mesoscale must be an integer multiple of the mesh")
    L_micro = int(round(ratio))
    centers, chi = partition_of_unity(dom, kappa)
    xi = local_slopes(ubar, kappa, centers)

    micro_horizon = 1.0 / (eps * eps)
    dt = stable_dt(V, d) if dt is None else dt
    stride = max(int(round(ubar.dt / (eps * eps) / dt)), 1)
    n_steps = int(round(micro_horizon / dt))
    t0 = -n_steps * dt

    from .dynamics import MultiSlope

    origins = [np.rint(y / eps).astype(int) for y in centers]
    grids = [TorusGrid(d, 2 * L_micro, origin=tuple(int(c) for c in z))
             for z in origins]
    keys = np.stack([g.site_keys for g in grids])
    micro_paths = [SlopePath(p.breakpoints / (eps * eps), p.slopes) for p in xi]
    _, rec = evolve_torus(grids[0], V, MultiSlope(micro_paths), src, t0,
                          n_steps, dt, np.zeros(grids[0].shape),
                          batch_keys=keys, record_stride=stride)
    correctors = [
        SpaceTimeField(g, t0, dt * stride, rec[:, i])
        for i, g in enumerate(grids)
    ]
    return centers, chi, xi, correctors, np.asarray(origins), L_micro


def build_two_scale(ubar: SpaceTimeField, kappa: float, correctors_pack,
                    V: Potential) -> TwoScaleExpansion:
    """Assemble the corrected effective solution and its gradient remainder.

    w = ubar + eps sum_y chi_y phi_y(t/eps^2, x/eps; xi_y(t)); the returned
    remainder field is grad w - sum_y avg(chi_y) grad v_y, whose equality
    with the product-rule terms is an exact algebraic identity.
    """
    centers, chi, xi, correctors, origins, L_micro = correctors_pack
    dom: DirichletDomain = ubar.grid
    eps = dom.mesh
    d = dom.dim
    n_slices = ubar.nslices
    w = ubar.values.copy()
    remainder = np.zeros((n_slices, d) + dom.shape)

    interior_chi_sum = chi.sum(axis=0)

    for i, (y, path, traj, z_y) in enumerate(zip(centers, xi, correctors, origins)):
        box_rad = traj.grid.radius
        lo = z_y - box_rad
        hi = z_y + box_rad
        lo_c = np.maximum(lo, 0)
        hi_c = np.minimum(hi, dom.resolution)
        if np.any(lo_c > hi_c):
            continue
        dom_sel = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo_c, hi_c))
        box_sel = tuple(slice(int(a - l), int(b - l) + 1)
                        for a, b, l in zip(lo_c, hi_c, lo))
        chi_i = chi[i][dom_sel]
        for j in range(n_slices):
            t = ubar.times[j]
            micro_slice = traj.values[min(traj.slice_index(
                np.clip(t / (eps * eps), traj.t0, traj.t1)), traj.nslices - 1)]
            w[(j,) + dom_sel] += eps * chi_i * micro_slice[box_sel]

    # gradient remainder: grad w - sum_y chi_bar grad v_y
    for j in range(n_slices):
        t = ubar.times[j]
        for ax in range(d):
            gw = np.zeros(dom.shape)
            gw_idx = [slice(None)] * d
            gw_idx[ax] = slice(0, dom.shape[ax] - 1)
            gw[tuple(gw_idx)] = np.diff(w[j], axis=ax) / eps
            total = gw.copy()
            for i, (path, traj, z_y) in enumerate(zip(xi, correctors, origins)):
                chi_edge = _edge_average(chi[i], ax)
                if not np.any(chi_edge):
                    continue
                gv = _corrector_edge_gradient(traj, z_y, dom, t, eps, ax)
                total -= chi_edge * (path.at(t)[ax] + gv)
            remainder[j, ax] = total
    return TwoScaleExpansion(ubar, kappa, centers, chi, xi, correctors,
                             origins, w, remainder, L_micro)


def _edge_average(chi: np.ndarray, ax: int) -> np.ndarray:
    out = np.zeros_like(chi)
    idx = [slice(None)] * chi.ndim
    idx[ax] = slice(0, chi.shape[ax] - 1)
    shifted = np.roll(chi, -1, axis=ax)
    out[tuple(idx)] = (0.5 * (chi + shifted))[tuple(idx)]
    return out


def _corrector_edge_gradient(traj, z_y, dom, t_macro, eps, ax):
    """Unit-lattice forward gradient of the corrector on domain edges."""
    micro_t = np.clip(t_macro / (eps * eps), traj.t0, traj.t1)
    sl = traj.values[traj.slice_index(micro_t)]
    g_box = np.roll(sl, -1, axis=ax) - sl  # periodic in the micro box
    grid = traj.grid
    out = np.zeros(dom.shape)
    lo = z_y - grid.radius
    hi = z_y + grid.radius
    lo_c = np.maximum(lo, 0)
    hi_c = np.minimum(hi, dom.resolution)
    if np.any(lo_c > hi_c):
        return out
    dom_sel = tuple(slice(int(a), int(b) + 1) for a, b in zip(lo_c, hi_c))
    box_sel = tuple(slice(int(a - l), int(b - l) + 1)
                    for a, b, l in zip(lo_c, hi_c, lo))
    out[dom_sel] = g_box[box_sel]
    return out


def error_terms(expansion: TwoScaleExpansion, cell) -> tuple[float, float, float]:
    """The three per-cell error summands: gradient mismatch in the cell,
    tilt differences to neighboring cells, and the relative mass of the
    neighboring correctors on the cell."""
    t_c, y = cell
    dom: DirichletDomain = expansion.ubar.grid
    eps = dom.mesh
    kappa = expansion.kappa
    d = dom.dim
    pts = dom.coordinates * eps
    centers = expansion.centers

    def center_index(yy):
        return int(np.argmin(np.sum((centers - np.asarray(yy)) ** 2, axis=1)))

    i_self = center_index(y)
    xi_self = expansion.xi[i_self].at(t_c - 1e-9)

    neighbors = [i for i, c in enumerate(centers)
                 if np.max(np.abs(c - centers[i_self])) <= kappa + 1e-9]

    # (i) gradient mismatch over the cell window, counted per neighbor
    t_lo = max(t_c - kappa**2, expansion.ubar.t0)
    mismatch = _gradient_mismatch(expansion.ubar, pts, centers[i_self], kappa,
                                  t_lo, t_c, xi_self)
    first = len(neighbors) * mismatch

    # (ii) tilt gaps to neighboring cells (same time cell and adjacent ones)
    second = 0.0
    for i in neighbors:
        for t_probe in (t_c - 1e-9, t_c - kappa**2 - 1e-9, t_c + kappa**2 - 1e-9):
            if expansion.xi[i].breakpoints[0] <= t_probe <= 0.0:
                second += float(np.linalg.norm(
                    xi_self - expansion.xi[i].at(t_probe)))

    # (iii) corrector mass of the neighbors over the micro window
    third = 0.0
    L_mic = expansion.L_micro
    for i in neighbors:
        traj = expansion.correctors[i]
        t_hi_m = np.clip(t_c / (eps * eps), traj.t0, traj.t1)
        t_lo_m = np.clip(t_hi_m - L_mic**2, traj.t0, traj.t1 - traj.dt)
        j0, j1 = traj.time_window(t_lo_m, t_hi_m)
        vals = traj.values[j0:j1 + 1]
        third += (eps / kappa) * float(np.sqrt((vals**2).mean()))
    return first, second, third


def _gradient_mismatch(ubar, pts, y, kappa, t_lo, t_hi, xi):
    dom: DirichletDomain = ubar.grid
    eps = dom.mesh
    d = dom.dim
    mask = np.ones(dom.shape, dtype=bool)
    for ax in range(d):
        mask &= np.abs(pts[..., ax] - y[ax]) <= kappa + 1e-12
    j0, j1 = ubar.time_window(t_lo, t_hi)
    acc = 0.0
    cnt = 0
    for j in range(j0, j1 + 1):
        for ax in range(d):
            g = np.diff(ubar.values[j], axis=ax) / eps
            gfull = np.zeros(dom.shape)
            idx = [slice(None)] * d
            idx[ax] = slice(0, dom.shape[ax] - 1)
            gfull[tuple(idx)] = g
            sel = mask & _valid_edge_mask(dom, ax)
            if np.any(sel):
                acc += ((gfull[sel] - xi[ax]) ** 2).mean()
        cnt += 1
    return float(np.sqrt(acc / max(cnt, 1)))


def _valid_edge_mask(dom, ax):
    m = np.zeros(dom.shape, dtype=bool)
    idx = [slice(None)] * dom.dim
    idx[ax] = slice(0, dom.shape[ax] - 1)
    m[tuple(idx)] = True
    return m


def error_terms_aggregate(expansion: TwoScaleExpansion) -> float:
    """Mean squared total error over all interior cells."""
    kappa = expansion.kappa
    n_cells = max(int(np.ceil(1.0 / (kappa * kappa))), 1)
    total = 0.0
    count = 0
    for j in range(n_cells):
        t_c = -j * kappa**2
        for y in expansion.centers:
            a, b, c = error_terms(expansion, (t_c, y))
            total += (a + b + c) ** 2
            count += 1
    return total / max(count, 1)


def flux_weak_norm(expansion: TwoScaleExpansion, Dsigma: EffectiveGradient,
                   V: Potential) -> float:
    """Negative-norm estimate of the flux error driven by the partition.

    Builds the site field sum_y grad chi_y . (V'(grad v_y) - Dsigma(xi_y)),
    rescales it to the unit lattice, extends by zero to the containing
    triadic cylinder, and applies the multiscale estimator; the returned
    value carries the mesh factor from the diffusive rescaling of the norm.
    """
    dom: DirichletDomain = expansion.ubar.grid
    eps = dom.mesh
    d = dom.dim
    ubar = expansion.ubar
    n_slices = ubar.nslices
    h = np.zeros((n_slices,) + dom.shape)
    for i, (path, traj, z_y) in enumerate(zip(expansion.xi, expansion.correctors,
                                              expansion.micro_origin)):
        chi_i = expansion.chi[i]
        grad_chi = []
        has_support = False
        for ax in range(d):
            g = np.zeros(dom.shape)
            idx = [slice(None)] * d
            idx[ax] = slice(0, dom.shape[ax] - 1)
            g[tuple(idx)] = np.diff(chi_i, axis=ax) / eps
            grad_chi.append(g)
            has_support = has_support or np.any(g)
        if not has_support:
            continue
        for j in range(n_slices):
            t = ubar.times[j]
            xi_t = path.at(np.clip(t, path.breakpoints[0], 0.0))
            target = Dsigma(xi_t)
            for ax in range(d):
                gv = xi_t[ax] + _corrector_edge_gradient(traj, z_y, dom, t, eps, ax)
                h[j] += grad_chi[ax] * (V.vp(gv) - target[ax])
    # rescale to the unit lattice and extend by zero to a triadic cylinder
    side = dom.shape[0]
    m = 0
    while 3**m < side or 9**m < 1.0 / (eps * eps):
        m += 1
    padded_side = 3**m
    micro_len = 9**m
    dt_micro = ubar.dt / (eps * eps)
    n_total = int(round(micro_len / dt_micro))
    n_use = min(n_slices, n_total)
    vals = np.zeros((n_total,) + (padded_side,) * d)
    sel = (slice(n_total - n_use, n_total),) + (slice(0, side),) * d
    vals[sel] = h[n_slices - n_use:]
    return eps * hminus1_par_multiscale(vals, dt_micro, m=m)


# ---------------------------------------------------------------------------
# excess decay
# ---------------------------------------------------------------------------

def excess_decay(u: SpaceTimeField, ls) -> ExcessProfile:
    """Scale-wise distance to affine profiles and to constants.

    E1(l) = (1/l) inf over affine maps of the averaged L2 distance on the
    trailing cylinder of radius l; the affine fit is an ordinary least
    squares on the regressors (1, x_1, ..., x_d), whose normal equations
    are diagonal on the symmetric box.
    """
    grid: TorusGrid = u.grid
    d = grid.dim
    ls = sorted(int(v) for v in ls)
    if ls[0] < 4 or ls[-1] > grid.radius:
        raise ValueError("scales must lie in [4, L]")
    excess, centered = [], []
    coords_full = grid.coordinates
    for l in ls:
        box = grid.box_slices(l)
        coords = np.stack([coords_full[..., ax][box] for ax in range(d)], axis=-1)
        j0, j1 = u.time_window(-float(l * l), 0.0)
        vals = u.values[(slice(j0, j1 + 1),) + box]
        nt = vals.shape[0]
        flat = vals.reshape(nt, -1)
        x = coords.reshape(-1, d).astype(float)
        mean_val = flat.mean()
        sum_x2 = (x**2).sum(axis=0) * nt
        p_hat = np.array([
            float((flat * x[:, ax]).sum()) / sum_x2[ax] for ax in range(d)
        ])
        fitted = mean_val + x @ p_hat
        resid = flat - fitted[None, :]
        e1 = np.sqrt((resid**2).mean()) / l
        cen = np.sqrt(((flat - mean_val) ** 2).mean()) / l
        excess.append(float(e1))
        centered.append(float(cen))
    return ExcessProfile(np.asarray(ls, dtype=float), np.asarray(excess),
                         np.asarray(centered))
