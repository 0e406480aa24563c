"""Deterministic discrete parabolic solvers.

All solvers step explicitly in time with the same stability rule as the
stochastic integrators (dt <= 1/(8 d c+)), so deterministic and stochastic
trajectories can be coupled exactly.  The periodic heat kernel is started
from a mean-zero point mass; superposing kernel tables realizes the
representation formula for forced equations, and the same stepping solves
the linearized equation along a recorded trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import DirichletDomain, EdgeTrajectory, SpaceTimeField, TorusGrid
from .potential import Potential


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------

def _env_slices(a, grid: TorusGrid, t0: float, dt: float, n_steps: int):
    """Yield the coefficient array (d, *shape) for each step."""
    d = grid.dim
    if a is None or np.isscalar(a):
        const = np.full((d,) + grid.shape, 1.0 if a is None else float(a))
        for _ in range(n_steps):
            yield const
    elif isinstance(a, np.ndarray):
        if a.shape != (d,) + grid.shape:
            raise ValueError("static environment must have shape (dim, *grid.shape)")
        for _ in range(n_steps):
            yield a
    elif isinstance(a, EdgeTrajectory):
        for k in range(n_steps):
            t = t0 + k * dt
            j = int(round((t - a.t0) / a.dt))
            j = min(max(j, 0), a.nslices - 1)
            yield a.values[j]
    else:
        raise TypeError(f"unsupported environment type {type(a)!r}")


def _check_dt(dt: float, d: int, c_plus: float):
    cap = 1.0 / (8.0 * d * c_plus)
    if dt > cap * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the stability bound {cap}")


def _div_a_grad(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Periodic divergence-form operator: sum_i D_i^-(a_i D_i^+ u)."""
    out = np.zeros_like(u)
    for ax in range(u.ndim):
        flux = a[ax] * (np.roll(u, -1, axis=ax) - u)
        out += flux - np.roll(flux, 1, axis=ax)
    return out


def _div_edge(F: np.ndarray) -> np.ndarray:
    out = np.zeros(F.shape[1:])
    for ax in range(F.shape[0]):
        out += F[ax] - np.roll(F[ax], 1, axis=ax)
    return out


# ---------------------------------------------------------------------------
# heat kernel
# ---------------------------------------------------------------------------

@dataclass
class HeatKernelTable:
    """Mean-zero periodic heat kernel from a point source at (s, y)."""

    grid: TorusGrid
    source_time: float
    source_site: tuple[int, ...]
    dt: float
    values: np.ndarray  # (nslices, *shape), slice 0 at t = source_time

    @property
    def times(self) -> np.ndarray:
        return self.source_time + self.dt * np.arange(self.values.shape[0])

    def at(self, t: float) -> np.ndarray:
        if t < self.source_time - 1e-12:
            return np.zeros(self.grid.shape)
        j = int(round((t - self.source_time) / self.dt))
        j = min(j, self.values.shape[0] - 1)
        return self.values[j]


def heat_kernel(a, grid: TorusGrid, s: float, y, t_end: float, dt: float,
                c_plus: float = 1.0) -> HeatKernelTable:
    """Explicit stepping of the periodic kernel started from delta_y - 1/|L|."""
    _check_dt(dt, grid.dim, c_plus)
    n_steps = int(round((t_end - s) / dt))
    P = np.full(grid.shape, -1.0 / grid.nsites)
    P[grid.array_index(y)] += 1.0
    out = np.empty((n_steps + 1,) + grid.shape)
    out[0] = P
    for k, a_k in enumerate(_env_slices(a, grid, s, dt, n_steps)):
        P = P + dt * _div_a_grad(P, a_k)
        out[k + 1] = P
    return HeatKernelTable(grid, s, tuple(y), dt, out)


def duhamel_solve(a, f: SpaceTimeField, c_plus: float = 1.0) -> SpaceTimeField:
    """Solution of du/dt - div(a grad u) = f, u(t0) = 0, by kernel superposition.

    The forcing must have zero spatial sum on every slice.  Superposition
    uses one kernel table per (source step, source site), with each source
    placed at the end of its forcing interval so the sum reproduces the
    explicit scheme's discrete representation formula.
    """
    grid: TorusGrid = f.grid
    sums = f.values.sum(axis=tuple(range(1, f.values.ndim)))
    if np.max(np.abs(sums)) > 1e-9 * grid.nsites:
        raise ValueError("forcing must have zero spatial sum on every slice")
    dt = f.dt
    n = f.nslices - 1
    coords = list(np.ndindex(*grid.shape))

    static_env = a is None or np.isscalar(a) or isinstance(a, np.ndarray)
    static_forcing = bool(np.all(f.values == f.values[0]))
    if static_env and static_forcing:
        # time-invariant kernel: one table per source site, superposed with
        # cumulative time weights
        u = np.zeros((f.nslices,) + grid.shape)
        f0 = f.values[0]
        for idx in coords:
            w = f0[idx]
            if w == 0.0:
                continue
            coord = tuple(int(c) - grid.radius for c in idx)
            tab = heat_kernel(a, grid, 0.0, coord, n * dt, dt, c_plus=c_plus)
            acc = np.zeros(grid.shape)
            for m in range(1, f.nslices):
                acc += tab.values[m - 1]
                u[m] += dt * w * acc
        return SpaceTimeField(grid, f.t0, dt, u)

    if f.nslices * grid.nsites > 10**4 * 4:
        raise ValueError("cylinder too large for kernel superposition")
    u = np.zeros((f.nslices,) + grid.shape)
    for j in range(n):  # forcing interval [t_j, t_{j+1})
        t_src = f.t0 + (j + 1) * dt
        fj = f.values[j]
        for idx in coords:
            w = fj[idx]
            if w == 0.0:
                continue
            coord = tuple(int(c) - grid.radius for c in idx)
            tab = heat_kernel(a, grid, t_src, coord, f.t1, dt, c_plus=c_plus)
            # kernel slice m corresponds to time t_src + m dt = t0 + (j+1+m) dt
            u[j + 1:] += dt * w * tab.values[: f.nslices - (j + 1)]
    return SpaceTimeField(grid, f.t0, dt, u)


# ---------------------------------------------------------------------------
# linear parabolic solver
# ---------------------------------------------------------------------------

def solve_linear_parabolic(
    a,
    grid: TorusGrid,
    t0: float,
    n_steps: int,
    dt: float,
    init: np.ndarray | None = None,
    edge_forcing=None,
    site_forcing=None,
    c_plus: float = 1.0,
    record_stride: int = 1,
) -> SpaceTimeField:
    """Explicit stepping of du/dt = div(a grad u) + div(F) + f, periodic.

    `edge_forcing` is a constant vector, a callable t -> vector, or an
    EdgeTrajectory; `site_forcing` is a callable t -> site array or a
    SpaceTimeField.  Mean-zero data stays mean-zero exactly.
    """
    _check_dt(dt, grid.dim, c_plus)
    d = grid.dim
    u = np.zeros(grid.shape) if init is None else np.array(init, dtype=float, copy=True)
    out = np.empty((n_steps // record_stride + 1,) + grid.shape)
    out[0] = u

    def edge_at(k):
        if edge_forcing is None:
            return None
        t = t0 + k * dt
        if isinstance(edge_forcing, EdgeTrajectory):
            j = min(max(int(round((t - edge_forcing.t0) / edge_forcing.dt)), 0),
                    edge_forcing.nslices - 1)
            return edge_forcing.values[j]
        F = edge_forcing(t) if callable(edge_forcing) else edge_forcing
        F = np.asarray(F, dtype=float)
        if F.shape == (d,):
            full = np.empty((d,) + grid.shape)
            for ax in range(d):
                full[ax] = F[ax]
            return full
        return F

    for k, a_k in enumerate(_env_slices(a, grid, t0, dt, n_steps)):
        du = _div_a_grad(u, a_k)
        F = edge_at(k)
        if F is not None:
            du += _div_edge(F)
        if site_forcing is not None:
            t = t0 + k * dt
            if isinstance(site_forcing, SpaceTimeField):
                du += site_forcing.at(t)
            else:
                du += site_forcing(t)
        u = u + dt * du
        if (k + 1) % record_stride == 0:
            out[(k + 1) // record_stride] = u
    return SpaceTimeField(grid, t0, dt * record_stride, out)


def _shift(a: np.ndarray, shift: int, ax: int, out: np.ndarray) -> np.ndarray:
    """Periodic shift by +-1 along ax via slice assignment (cheap on small
    arrays where np.roll's overhead dominates)."""
    n = a.shape[ax]
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    if shift == -1:  # out[x] = a[x + e_ax]
        lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
        out[tuple(lo)] = a[tuple(hi)]
        lo[ax], hi[ax] = slice(n - 1, n), slice(0, 1)
        out[tuple(lo)] = a[tuple(hi)]
    else:  # out[x] = a[x - e_ax]
        lo[ax], hi[ax] = slice(1, n), slice(0, n - 1)
        out[tuple(lo)] = a[tuple(hi)]
        lo[ax], hi[ax] = slice(0, 1), slice(n - 1, n)
        out[tuple(lo)] = a[tuple(hi)]
    return out


def solve_linearized_corrector(phi: SpaceTimeField, p, xi, V: Potential) -> SpaceTimeField:
    """Response of the tilted dynamic to an infinitesimal tilt shift.

    Solves dw/dt = div(a grad w) + div(a xi) from w = 0 at the start of the
    recorded trajectory, with a(t, e) = V''(p.e + grad phi(t, e)); periodic,
    and the spatial mean is conserved exactly.
    """
    grid: TorusGrid = phi.grid
    d = grid.dim
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (d,):
        raise ValueError(f"tilt direction must be a {d}-vector")
    pv = np.zeros(d) if p is None else np.asarray(p, dtype=float)
    dt = phi.dt
    _check_dt(dt, d, V.c_plus)
    n = phi.nslices
    # environment along the whole trajectory, vectorized over slices
    env = np.empty((n - 1, d) + grid.shape)
    for ax in range(d):
        g = np.roll(phi.values[:-1], -1, axis=1 + ax) - phi.values[:-1] + pv[ax]
        env[:, ax] = V.vpp(g)
    w = np.zeros(grid.shape)
    out = np.empty_like(phi.values)
    out[0] = w
    flux = np.empty(grid.shape)
    shifted = np.empty(grid.shape)
    du = np.empty(grid.shape)
    for j in range(n - 1):
        du.fill(0.0)
        for ax in range(d):
            _shift(w, -1, ax, flux)
            flux -= w
            if xi[ax] != 0.0:
                flux += xi[ax]
            flux *= env[j, ax]
            du += flux
            du -= _shift(flux, +1, ax, shifted)
        w = w + dt * du
        out[j + 1] = w
    return SpaceTimeField(grid, phi.t0, dt, out)


# ---------------------------------------------------------------------------
# effective gradient (homogenized nonlinearity)
# ---------------------------------------------------------------------------

@dataclass
class EffectiveGradient:
    """Evaluator p -> gradient of the effective free energy.

    Either the exact identity map (the Gaussian case) or a componentwise
    monotone piecewise-linear interpolation of axis-aligned flux estimates,
    extended oddly and clamped (with a flag) outside the tabulated range.
    """

    kind: str  # "identity" | "table"
    knots: np.ndarray | None = None  # (m,), nonnegative, increasing
    table: np.ndarray | None = None  # (m,), h(knots), odd extension implied
    clamp_events: int = field(default=0, compare=False)

    @classmethod
    def identity(cls) -> "EffectiveGradient":
        return cls(kind="identity")

    @classmethod
    def from_axis_table(cls, knots, values) -> "EffectiveGradient":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots[0] != 0.0:
            raise ValueError("axis table must start at slope 0")
        # enforce monotonicity (running maximum) so the map stays cyclically
        # monotone: it is the gradient of the convex sum of antiderivatives
        values = np.maximum.accumulate(values)
        return cls(kind="table", knots=knots, table=values)

    @property
    def lipschitz(self) -> float:
        if self.kind == "identity":
            return 1.0
        slopes = np.diff(self.table) / np.diff(self.knots)
        return float(max(slopes.max(), 1e-12))

    def __call__(self, P: np.ndarray) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        if self.kind == "identity":
            return P
        s = np.abs(P)
        if np.any(s > self.knots[-1]):
            self.clamp_events += int(np.count_nonzero(s > self.knots[-1]))
            s = np.minimum(s, self.knots[-1])
        return np.sign(P) * np.interp(s, self.knots, self.table)


def solve_homogenized(
    Dsigma: EffectiveGradient,
    dom: DirichletDomain,
    f,
    dt_unit: float | None = None,
    record_stride: int | None = None,
    on_step=None,
    init: np.ndarray | None = None,
) -> SpaceTimeField:
    """Explicit stepping of the effective equation on the mesh-eps domain.

    The divergence is the conservative summation-by-parts form: the flux
    component i evaluated at x enters with opposite signs at x and x + eps
    e_i, so the discrete integration-by-parts identity holds exactly.
    Boundary sites are pinned to the locally averaged datum at every step.
    """
    from .dynamics import smoothed_boundary_datum

    eps = dom.mesh
    d = dom.dim
    if dt_unit is None:
        dt_unit = 1.0 / (8.0 * d * max(Dsigma.lipschitz, 1.0))
    dt = dt_unit * eps * eps
    n_steps = int(round(1.0 / dt))
    datum = smoothed_boundary_datum(f, dom)
    interior = dom.interior_mask
    boundary = dom.boundary_mask
    both = interior | boundary

    u = np.zeros(dom.shape)
    u[both] = datum(-1.0, both)
    if init is not None:
        u[interior] = np.asarray(init)[interior]

    if record_stride is None:
        record_stride = max(n_steps // 256, 1)
    out = np.empty((n_steps // record_stride + 1,) + dom.shape)
    out[0] = u

    for k in range(n_steps):
        du = homogenized_operator(Dsigma, u, eps)
        u[interior] += dt * du[interior]
        t_next = -1.0 + (k + 1) * dt
        u[boundary] = datum(t_next, boundary)
        if on_step is not None:
            on_step(k, t_next, u)
        if (k + 1) % record_stride == 0:
            out[(k + 1) // record_stride] = u
    return SpaceTimeField(dom, -1.0, dt * record_stride, out)


def homogenized_operator(Dsigma: EffectiveGradient, u: np.ndarray, eps: float) -> np.ndarray:
    """Conservative divergence of the effective flux on the mesh-eps grid.

    Fluxes use forward differences; sites on the far faces carry no forward
    gradient and their entries are zero-padded, which is harmless because
    only interior sites are ever updated.
    """
    d = u.ndim
    inner = tuple(slice(0, n - 1) for n in u.shape)
    grads = np.zeros((d,) + u.shape)
    for ax in range(d):
        grads[(ax,) + inner] = (np.diff(u, axis=ax) / eps)[
            tuple(slice(0, n - 1) if a != ax else slice(None)
                  for a, n in enumerate(u.shape))]
    # evaluate the vector map on full gradient vectors at inner sites
    gvecs = np.stack([grads[ax][inner] for ax in range(d)], axis=-1)
    fvecs = Dsigma(gvecs)
    out = np.zeros_like(u)
    for ax in range(d):
        flux = np.zeros(u.shape)
        flux[inner] = fvecs[..., ax]
        pad_lo = [(0, 0)] * d
        pad_lo[ax] = (1, 0)
        shifted = np.pad(flux, pad_lo)[tuple(
            slice(0, n) for n in u.shape)]
        out += (flux - shifted) / eps
    return out


def integration_by_parts_gap(Dsigma: EffectiveGradient, u: np.ndarray,
                             v: np.ndarray, eps: float) -> float:
    """|sum div(Dsigma(grad u)) v + sum Dsigma(grad u).grad v| for compactly
    supported u, v (zero on all faces)."""
    d = u.ndim
    lhs = float(np.sum(homogenized_operator(Dsigma, u, eps) * v))
    inner = tuple(slice(0, n - 1) for n in u.shape)
    grads_u = []
    grads_v = []
    for ax in range(d):
        sel = tuple(slice(0, n - 1) if a != ax else slice(None)
                    for a, n in enumerate(u.shape))
        grads_u.append((np.diff(u, axis=ax) / eps)[sel])
        grads_v.append((np.diff(v, axis=ax) / eps)[sel])
    gu = np.stack(grads_u, axis=-1)
    gv = np.stack(grads_v, axis=-1)
    rhs = float(np.sum(Dsigma(gu) * gv))
    return abs(lhs + rhs)


# ---------------------------------------------------------------------------
# pointwise kernel bound
# ---------------------------------------------------------------------------

def gaussian_envelope(C: float, L: int, t: float, dx: np.ndarray) -> np.ndarray:
    """The comparison profile C (t v 1)^{-d/2} exp(-|x|/(C sqrt t)) exp(-t/(C L^2))."""
    d = dx.shape[-1]
    r = np.sqrt(np.sum(dx.astype(float) ** 2, axis=-1))
    tv = max(t, 1.0)
    return C * tv ** (-d / 2.0) * np.exp(-r / (C * np.sqrt(t))) * np.exp(-t / (C * L * L))


@dataclass
class NashAronsonFit:
    c_hat: float | None
    ok: bool
    worst_ratio: float


def nash_aronson_fit(P: HeatKernelTable, grid_levels=(1, 2, 4, 8, 16, 32, 64)) -> NashAronsonFit:
    """Smallest grid constant whose envelope dominates P + 1/|L| up to time L^2.

    The envelope is checked at times 1 <= t - s <= L^2 (below one unit the
    comparison profile saturates).  Returns a flagged result if no grid
    constant works.
    """
    grid = P.grid
    L = grid.radius
    shifted = grid.coordinates - np.asarray(P.source_site)
    wrapped = (shifted + grid.radius) % grid.side - grid.radius
    times = P.times - P.source_time
    sel = (times >= 1.0 - 1e-9) & (times <= L * L + 1e-9)
    vals = P.values[sel] + 1.0 / grid.nsites
    tsel = times[sel]
    worst = np.inf
    for C in grid_levels:
        ratios = []
        for t, slab in zip(tsel, vals):
            env = gaussian_envelope(float(C), L, float(t), wrapped)
            ratios.append(np.max(slab / env))
        worst = min(worst, float(np.max(ratios)))
        if worst <= 1.0 + 1e-12:
            return NashAronsonFit(c_hat=float(C), ok=True, worst_ratio=worst)
    return NashAronsonFit(c_hat=None, ok=False, worst_ratio=worst)
