"""Stochastic integrators for the lattice Langevin dynamics.

One explicit Euler-Maruyama engine drives everything: the periodic interface
dynamic with (possibly time-dependent) tilt, the Dirichlet dynamic for the
rescaled boundary-value problem, and the Gaussian free-field dynamic.  The
step is dt = 1/(8 d c+), at which the drift is contractive and the explicit
scheme preserves the maximum principle.

Noise is addressed by absolute step index and absolute site coordinates, so
trajectories driven by the same NoiseSource are coupled pathwise whether or
not their windows coincide; mean subtraction keeps every torus slice at
spatial average zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import (
    DirichletDomain,
    EdgeTrajectory,
    SpaceTimeField,
    TorusGrid,
)
from .noise import NoiseSource
from .potential import Potential, from_config as potential_from_config
from .spectral import laplacian_eigenvalues


def stable_dt(V: Potential, d: int) -> float:
    """Largest admissible explicit step, 1/(8 d c+)."""
    return 1.0 / (8.0 * d * V.c_plus)


@dataclass(frozen=True)
class SlopePath:
    """Piecewise-constant tilt q(t): value i holds on [breakpoints[i], breakpoints[i+1])."""

    breakpoints: np.ndarray  # (n,), strictly increasing
    slopes: np.ndarray  # (n, d)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        sl = np.atleast_2d(np.asarray(self.slopes, dtype=np.float64))
        if bp.ndim != 1 or len(bp) != len(sl):
            raise ValueError("breakpoints and slopes must have matching lengths")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)

    @classmethod
    def constant(cls, q, t_start: float = -np.inf) -> "SlopePath":
        return cls(np.array([t_start]), np.atleast_2d(np.asarray(q, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    def at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"slope path does not cover time {t}")
        return self.slopes[i]

    def covers(self, t_lo: float, t_hi: float) -> bool:
        return self.breakpoints[0] <= t_lo and t_lo <= t_hi


def as_slope_path(q, d: int, t_start: float = -np.inf) -> SlopePath:
    if isinstance(q, SlopePath):
        return q
    if q is None:
        return SlopePath.constant(np.zeros(d), t_start)
    return SlopePath.constant(np.asarray(q, dtype=np.float64), t_start)


def slope_from_config(spec, d: int) -> SlopePath:
    """Tilt from a config value: a constant vector or a breakpoint list
    [{"t": t0, "q": [...]}, ...]."""
    if spec is None:
        return SlopePath.constant(np.zeros(d))
    if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], dict):
        bps = np.array([float(item["t"]) for item in spec])
        vals = np.array([[float(v) for v in item["q"]] for item in spec])
        return SlopePath(bps, vals)
    return SlopePath.constant(np.asarray(spec, dtype=np.float64))


@dataclass
class SimConfig:
    """Bundle of run parameters; dt defaults to the stability rule."""

    potential: dict
    grid: dict
    horizon: float
    slope: object = None
    dt: float | None = None
    seed: int = 0
    replicas: int = 1
    burn_in: float | None = None

    def resolved_dt(self) -> float:
        V = potential_from_config(self.potential)
        d = int(self.grid["d"])
        cap = stable_dt(V, d)
        if self.dt is None:
            return cap
        if self.dt > cap * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates the stability bound {cap}")
        return self.dt


# ---------------------------------------------------------------------------
# core torus engine
# ---------------------------------------------------------------------------

class _NoiseBuffer:
    """Reusable buffers for one mean-subtracted normal field per step.

    `keys` may carry a leading batch axis (stacked windows with distinct
    absolute coordinates); the spatial mean is always taken over the
    trailing `spatial_ndim` axes.
    """

    def __init__(self, src: NoiseSource, keys: np.ndarray,
                 replicas: np.ndarray | None, spatial_ndim: int | None = None):
        self.src = src
        self.keys = keys
        self.replicas = replicas
        self.spatial_ndim = keys.ndim if spatial_ndim is None else spatial_ndim
        shape = keys.shape if replicas is None else (len(replicas),) + keys.shape
        self._bits = (np.empty(shape, dtype=np.uint64),
                      np.empty(shape, dtype=np.uint64))

    def __call__(self, step: int) -> np.ndarray:
        g = self.src.raw_normals(self.keys, step, replicas=self.replicas,
                                 out_bits=self._bits)
        axes = tuple(range(g.ndim - self.spatial_ndim, g.ndim))
        if len(axes) == g.ndim:
            g -= g.mean()
        else:
            g -= g.mean(axis=axes, keepdims=True)
        return g


class MultiSlope:
    """Batch of slope paths evaluated together: at(t) -> (B, d)."""

    def __init__(self, paths):
        self.paths = list(paths)

    def at(self, t: float) -> np.ndarray:
        return np.stack([p.at(t) for p in self.paths])

    def covers(self, t_lo: float, t_hi: float) -> bool:
        return all(p.covers(t_lo, t_hi) for p in self.paths)


def evolve_torus(
    grid: TorusGrid,
    V: Potential,
    slope: SlopePath | None,
    src: NoiseSource | None,
    t0: float,
    n_steps: int,
    dt: float,
    init: np.ndarray,
    replicas: np.ndarray | None = None,
    mean_zero_noise: bool = True,
    on_step=None,
    record_stride: int | None = None,
    batch_keys: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Advance the periodic Langevin dynamic by n_steps explicit steps.

    init has shape grid.shape, or (B, *grid.shape) when `replicas` gives the
    B replica ids.  Returns (final_state, recorded) where recorded stacks
    every record_stride-th slice (including the initial one) if requested.
    `on_step(k, t_next, state)` is invoked after each update.

    The absolute step index is round(t/dt): windows driven by the same
    NoiseSource share their Brownian increments.  `batch_keys` of shape
    (B, *grid.shape) runs B windows of one replica stream in parallel, each
    addressed by its own absolute site coordinates; the slope may then be a
    MultiSlope with one path per window.
    """
    d = grid.dim
    state = np.array(init, dtype=np.float64, copy=True)
    batched = replicas is not None or batch_keys is not None
    if batched and state.ndim == d:
        b = len(replicas) if replicas is not None else batch_keys.shape[0]
        state = np.broadcast_to(state, (b,) + grid.shape).copy()
    ax0 = 1 if batched else 0

    noise = None
    if src is not None:
        if not mean_zero_noise:
            raise NotImplementedError("torus dynamics always run with mean-zero noise")
        if batch_keys is not None:
            if replicas is not None:
                raise ValueError("batch_keys and replicas are mutually exclusive")
            noise = _NoiseBuffer(src, batch_keys, None, spatial_ndim=d)
        else:
            noise = _NoiseBuffer(src, grid.site_keys, replicas)

    k0 = int(round(t0 / dt))
    sq = np.sqrt(2.0 * dt)
    drift = np.empty_like(state)
    gbuf = np.empty_like(state)

    recorded = None
    if record_stride is not None:
        n_rec = n_steps // record_stride + 1
        recorded = np.empty((n_rec,) + state.shape, dtype=np.float64)
        recorded[0] = state

    for k in range(n_steps):
        q = slope.at(t0 + k * dt) if slope is not None else None
        drift.fill(0.0)
        for ax in range(d):
            a = ax0 + ax
            np.subtract(np.roll(state, -1, axis=a), state, out=gbuf)
            if q is not None:
                if q.ndim == 2:  # per-window slopes, broadcast over space
                    gbuf += q[:, ax].reshape((-1,) + (1,) * d)
                elif q[ax] != 0.0:
                    gbuf += q[ax]
            f = V.vp(gbuf)
            drift += f
            drift -= np.roll(f, 1, axis=a)
        state += dt * drift
        if noise is not None:
            state += sq * noise(k0 + k)
        if on_step is not None:
            on_step(k, t0 + (k + 1) * dt, state)
        if recorded is not None and (k + 1) % record_stride == 0:
            recorded[(k + 1) // record_stride] = state
    return state, recorded


# ---------------------------------------------------------------------------
# public dynamics
# ---------------------------------------------------------------------------

def run_corrector(
    grid: TorusGrid,
    horizon: float,
    slope,
    V: Potential,
    src: NoiseSource,
    dt: float | None = None,
    t_end: float = 0.0,
    record_stride: int = 1,
    init: np.ndarray | None = None,
) -> SpaceTimeField:
    """Mean-zero periodic dynamic with tilt, started from zero at t_end - horizon.

    Returns the recorded trajectory; the spatial mean of every slice stays
    at zero because the noise is mean-subtracted and the drift conserves the
    spatial sum for symmetric potentials.
    """
    dt = stable_dt(V, grid.dim) if dt is None else dt
    if dt > stable_dt(V, grid.dim) * (1 + 1e-12):
        raise ValueError("time step violates the stability rule")
    n_steps = int(round(horizon / dt))
    t0 = t_end - n_steps * dt
    path = as_slope_path(slope, grid.dim, t_start=t0)
    if not path.covers(t0, t_end):
        raise ValueError("slope path does not cover the simulation window")
    start = np.zeros(grid.shape) if init is None else init
    _, rec = evolve_torus(grid, V, path, src, t0, n_steps, dt, start,
                          record_stride=record_stride)
    return SpaceTimeField(grid, t0, dt * record_stride, rec)


def sample_gff(grid: TorusGrid, src: NoiseSource, tag: int = 0,
               replicas: np.ndarray | None = None) -> np.ndarray:
    """Mean-zero Gaussian free field by spectral synthesis.

    White noise on the sites is pushed to Fourier space, scaled by
    1/sqrt(lambda_k) on every nonzero mode, and transformed back; starting
    from a real field enforces the conjugacy constraint between opposite
    modes exactly.
    """
    g = src.field_normals(grid.site_keys, tag=tag, replicas=replicas)
    lam = laplacian_eigenvalues(grid)
    scale = np.zeros(grid.shape)
    flat = scale.reshape(-1)
    lam_flat = lam.reshape(-1)
    flat[1:] = 1.0 / np.sqrt(lam_flat[1:])
    axes = tuple(range(g.ndim - grid.dim, g.ndim))
    ghat = np.fft.fftn(g, axes=axes)
    ghat *= scale
    out = np.fft.ifftn(ghat, axes=axes).real
    return out


def run_gff_dynamic(
    grid: TorusGrid,
    horizon: float,
    src: NoiseSource,
    dt: float | None = None,
    t_end: float = 0.0,
    record_stride: int = 1,
    init_tag: int = 1,
    replicas: np.ndarray | None = None,
) -> SpaceTimeField | np.ndarray:
    """Stationary free-field dynamic: GFF initial data plus quadratic drift.

    The initial slice comes from the initial-condition noise channel, so it
    is independent of the driving increments.  The single-replica form
    returns a SpaceTimeField; with `replicas` the raw stacked trajectory
    array (slices, B, *shape) is returned instead.
    """
    V = quadratic_potential()
    dt = stable_dt(V, grid.dim) if dt is None else dt
    n_steps = int(round(horizon / dt))
    t0 = t_end - n_steps * dt
    init = sample_gff(grid, src, tag=init_tag, replicas=replicas)
    _, rec = evolve_torus(grid, V, None, src, t0, n_steps, dt, init,
                          replicas=replicas, record_stride=record_stride)
    if replicas is None:
        return SpaceTimeField(grid, t0, dt * record_stride, rec)
    return rec


def run_stationary_periodic(
    grid: TorusGrid,
    p,
    V: Potential,
    src: NoiseSource,
    horizon: float,
    burn_in: float | None = None,
    dt: float | None = None,
    record_stride: int = 1,
) -> SpaceTimeField:
    """Trajectory of the tilted dynamic after equilibration, ending at t = 0.

    The quadratic potential starts from an exact free-field sample and needs
    no burn-in; other potentials start from zero and discard a burn-in of
    L^2 by default.
    """
    dt = stable_dt(V, grid.dim) if dt is None else dt
    if V.name == "quadratic":
        init = sample_gff(grid, src)
        n_steps = int(round(horizon / dt))
        t0 = -n_steps * dt
        path = as_slope_path(p, grid.dim, t_start=t0)
        _, rec = evolve_torus(grid, V, path, src, t0, n_steps, dt, init,
                              record_stride=record_stride)
        return SpaceTimeField(grid, t0, dt * record_stride, rec)
    if burn_in is None:
        burn_in = float(grid.radius**2)
    n_burn = int(round(burn_in / dt))
    n_keep = int(round(horizon / dt))
    t0 = -(n_burn + n_keep) * dt
    path = as_slope_path(p, grid.dim, t_start=t0)
    state, _ = evolve_torus(grid, V, path, src, t0, n_burn, dt,
                            np.zeros(grid.shape))
    _, rec = evolve_torus(grid, V, path, src, t0 + n_burn * dt, n_keep, dt, state,
                          record_stride=record_stride)
    return SpaceTimeField(grid, t0 + n_burn * dt, dt * record_stride, rec)


def quadratic_potential() -> Potential:
    from .potential import quadratic

    return quadratic()


# 8-point Gauss-Legendre on [0, 1]
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)
_GL8_X = 0.5 * (_GL8_X + 1.0)
_GL8_W = 0.5 * _GL8_W


def difference_environment(u: SpaceTimeField, v: SpaceTimeField, V: Potential,
                           slope_u=None, slope_v=None) -> EdgeTrajectory:
    """Coefficient field a(t,e) = int_0^1 V''(s grad v + (1-s) grad u) ds.

    Optional constant tilts are added to the stored gradients so the same
    helper covers tilted dynamics.  Values are clamped into [c-, c+], which
    only removes quadrature roundoff.
    """
    if u.values.shape != v.values.shape or abs(u.t0 - v.t0) > 1e-12 or abs(u.dt - v.dt) > 1e-12:
        raise ValueError("fields must share cylinder and time grid")
    grid: TorusGrid = u.grid
    d = grid.dim
    n = u.nslices
    out = np.empty((n,) + (d,) + grid.shape)
    qu = np.zeros(d) if slope_u is None else np.asarray(slope_u, dtype=float)
    qv = np.zeros(d) if slope_v is None else np.asarray(slope_v, dtype=float)
    for j in range(n):
        for ax in range(d):
            gu = np.roll(u.values[j], -1, axis=ax) - u.values[j] + qu[ax]
            gv = np.roll(v.values[j], -1, axis=ax) - v.values[j] + qv[ax]
            acc = np.zeros(grid.shape)
            for s, w in zip(_GL8_X, _GL8_W):
                acc += w * V.vpp(s * gv + (1.0 - s) * gu)
            out[j, ax] = np.clip(acc, V.c_minus, V.c_plus)
    return EdgeTrajectory(grid, u.t0, u.dt, out)


def tilted_environment(phi: SpaceTimeField, p, V: Potential) -> EdgeTrajectory:
    """a(t,e) = V''(p.e + grad phi(t,e)) along a recorded trajectory."""
    grid: TorusGrid = phi.grid
    d = grid.dim
    pv = np.zeros(d) if p is None else np.asarray(p, dtype=float)
    out = np.empty((phi.nslices, d) + grid.shape)
    for j in range(phi.nslices):
        for ax in range(d):
            g = np.roll(phi.values[j], -1, axis=ax) - phi.values[j] + pv[ax]
            out[j, ax] = V.vpp(g)
    return EdgeTrajectory(grid, phi.t0, phi.dt, out)


# ---------------------------------------------------------------------------
# Dirichlet dynamic (rescaled boundary-value problem)
# ---------------------------------------------------------------------------

def smoothed_boundary_datum(f, dom: DirichletDomain, nodes: int = 8):
    """Return g(t, mask) evaluating the local average of f at masked sites.

    The datum is averaged over the cube of half-width one mesh around each
    site with a fixed tensor Gauss-Legendre rule, normalized so constants
    are reproduced exactly.
    """
    eps = dom.mesh
    x1, w1 = np.polynomial.legendre.leggauss(nodes)
    x1 = x1 * eps
    w1 = w1 / w1.sum()
    offsets = np.stack(np.meshgrid(*([x1] * dom.dim), indexing="ij"), axis=-1).reshape(-1, dom.dim)
    weights = np.ones(len(offsets))
    for ax in range(dom.dim):
        weights = weights * np.tile(
            np.repeat(w1, nodes ** (dom.dim - ax - 1)), nodes**ax
        )

    def g(t: float, mask: np.ndarray) -> np.ndarray:
        pts = dom.points(mask)  # (M, d)
        vals = f(t, pts[:, None, :] + offsets[None, :, :])
        return vals @ weights

    return g


def run_dirichlet(
    dom: DirichletDomain,
    f,
    V: Potential,
    src: NoiseSource | None,
    dt_unit: float | None = None,
    record_stride: int | None = None,
    on_step=None,
    replicas: np.ndarray | None = None,
) -> SpaceTimeField | np.ndarray:
    """Langevin dynamic on the mesh-eps domain driven by diffusively rescaled noise.

    Internally runs the unit-lattice dynamic U on the time interval
    (-1/eps^2, 0) and returns u(t, x) = eps U(t/eps^2, x/eps), which solves
    the mesh-eps system with noise amplitude sqrt(2) eps; macroscopic times
    live in (-1, 0).  Boundary sites (and the initial slice) are pinned to
    the locally averaged datum f at every step.  `f(t, points)` must accept
    points of shape (..., d) in the unit cube.

    With src=None the noise is switched off (deterministic diagnostic mode).
    With `replicas`, all replica streams advance together; the recorded
    array then has shape (slices, B, *dom.shape) and is returned raw.
    """
    eps = dom.mesh
    d = dom.dim
    dt_unit = stable_dt(V, d) if dt_unit is None else dt_unit
    n_steps = int(round(1.0 / (eps * eps) / dt_unit))
    t0_unit = -n_steps * dt_unit
    k0 = int(round(t0_unit / dt_unit))

    datum = smoothed_boundary_datum(f, dom)
    interior = dom.interior_mask
    boundary = dom.boundary_mask
    all_mask = interior | boundary

    batched = replicas is not None
    lead = (len(replicas),) if batched else ()
    bsel = (slice(None),) if batched else ()

    # initial slice: averaged datum everywhere (interior + boundary), in
    # unit-lattice amplitude
    state = np.zeros(lead + dom.shape)
    state[bsel + (all_mask,)] = datum(t0_unit * eps * eps, all_mask) / eps

    noise = _NoiseBuffer(src, dom.site_keys, replicas) if src is not None else None
    sq = np.sqrt(2.0 * dt_unit)

    if record_stride is None:
        record_stride = max(n_steps // 256, 1)
    n_rec = n_steps // record_stride + 1
    recorded = np.empty((n_rec,) + lead + dom.shape)
    recorded[0] = state * eps

    ax0 = 1 if batched else 0
    drift = np.zeros(lead + dom.shape)
    for k in range(n_steps):
        drift.fill(0.0)
        for ax in range(d):
            gplus = np.diff(state, axis=ax0 + ax)  # forward differences
            flux = V.vp(gplus)
            pad = [(0, 0)] * (ax0 + d)
            pad[ax0 + ax] = (1, 0)
            fp = np.pad(flux, pad)
            pad[ax0 + ax] = (0, 1)
            fm = np.pad(flux, pad)
            drift += fm - fp
        state[bsel + (interior,)] += dt_unit * drift[bsel + (interior,)]
        if noise is not None:
            state[bsel + (interior,)] += sq * noise(k0 + k)[bsel + (interior,)]
        t_next = (t0_unit + (k + 1) * dt_unit) * eps * eps
        state[bsel + (boundary,)] = datum(t_next, boundary) / eps
        if on_step is not None:
            on_step(k, t_next, state)
        if (k + 1) % record_stride == 0:
            recorded[(k + 1) // record_stride] = state * eps
    if batched:
        return recorded
    macro_dt = dt_unit * eps * eps * record_stride
    return SpaceTimeField(dom, -1.0, macro_dt, recorded)
