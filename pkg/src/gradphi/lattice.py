"""Lattice geometry and discrete calculus.

Two site sets are supported: the periodic box (torus) of side 2L+1 used by
the interface dynamics, and the Dirichlet discretization of the unit cube
at mesh 1/N used by the rescaled boundary-value problems.  Fields are plain
numpy arrays over the grid shape; space-time fields carry a uniform time
grid and snap query times to the nearest slice.

Site indexing is row-major over {-L..L}^d.  Edge fields store the value on
the positively oriented edge (x, x+e_i) at index [i, x]; antisymmetry is
realized by the sign convention g(x, x-e_i) = -g(x-e_i, x).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import noise as _noise


@dataclass(frozen=True)
class TorusGrid:
    """Periodic box {-L..L}^d with 2d-regular wrap-around adjacency.

    A nonzero `origin` shifts the absolute coordinates used for noise
    addressing (windows cut out of a larger lattice see the Brownian
    motions of their absolute sites) without changing the geometry.
    """

    dim: int
    radius: int
    origin: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dim}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.origin is not None and len(self.origin) != self.dim:
            raise ValueError("origin must have one entry per dimension")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def nsites(self) -> int:
        return self.side**self.dim

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Integer coordinates of every site, shape (*shape, dim)."""
        axes = [np.arange(-self.radius, self.radius + 1)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def site_keys(self) -> np.ndarray:
        coords = self.coordinates
        if self.origin is not None:
            coords = coords + np.asarray(self.origin, dtype=np.int64)
        return _noise.site_keys(coords)

    def flat_index(self, coord) -> int:
        idx = tuple((c + self.radius) % self.side for c in coord)
        return int(np.ravel_multi_index(idx, self.shape))

    def array_index(self, coord) -> tuple[int, ...]:
        return tuple(int((c + self.radius) % self.side) for c in coord)

    def neighbors(self, coord) -> list[tuple[int, ...]]:
        out = []
        for ax in range(self.dim):
            for s in (+1, -1):
                n = list(coord)
                n[ax] = (n[ax] + s + self.radius) % self.side - self.radius
                out.append(tuple(n))
        return out

    def box_slices(self, radius: int, center=None) -> tuple[np.ndarray, ...]:
        """Index arrays selecting the sub-box center + {-radius..radius}^d."""
        if radius > self.radius:
            raise ValueError("sub-box does not fit in the torus")
        center = (0,) * self.dim if center is None else center
        idx = []
        for ax in range(self.dim):
            offs = np.arange(-radius, radius + 1) + center[ax] + self.radius
            idx.append(offs % self.side)
        return np.ix_(*idx)


def make_torus(d: int, L: int) -> TorusGrid:
    return TorusGrid(dim=d, radius=L)


@dataclass(frozen=True)
class DirichletDomain:
    """Unit cube discretized at mesh 1/N.

    Sites live on the full grid {0..N}^d; interior sites are those with all
    coordinates in {1..N-1}.  The boundary set is the external vertex
    boundary of the interior: sites with exactly one coordinate in {0, N}
    and the rest interior, so every boundary site touches the interior.
    """

    dim: int
    resolution: int

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dim}")
        if self.resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {self.resolution}")

    @property
    def mesh(self) -> float:
        return 1.0 / self.resolution

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution + 1,) * self.dim

    @cached_property
    def coordinates(self) -> np.ndarray:
        axes = [np.arange(self.resolution + 1)] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def site_keys(self) -> np.ndarray:
        return _noise.site_keys(self.coordinates)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        c = self.coordinates
        return np.all((c >= 1) & (c <= self.resolution - 1), axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        c = self.coordinates
        on_face = (c == 0) | (c == self.resolution)
        return (on_face.sum(axis=-1) == 1) & ~self.interior_mask

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    def points(self, mask: np.ndarray) -> np.ndarray:
        """Physical coordinates (in [0,1]^d) of the masked sites."""
        return self.coordinates[mask] * self.mesh


@dataclass(frozen=True)
class ParabolicCylinder:
    """Time interval (t_lo, t_hi) times a spatial box (or the full torus)."""

    t_lo: float
    t_hi: float
    radius: int | None = None  # None: full torus / full domain
    center: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.t_lo < self.t_hi:
            raise ValueError("need t_lo < t_hi")

    @property
    def duration(self) -> float:
        return self.t_hi - self.t_lo

    def volume(self, grid) -> float:
        if self.radius is None:
            nsites = grid.nsites
        else:
            nsites = (2 * self.radius + 1) ** grid.dim
        return self.duration * nsites


def standard_cylinder(L: int, center=None) -> ParabolicCylinder:
    """The cylinder (-L^2, 0) x (center + {-L..L}^d)."""
    return ParabolicCylinder(t_lo=-float(L * L), t_hi=0.0, radius=L, center=center)


@dataclass
class SpaceTimeField:
    """Site values on a uniform time grid; queries snap to the nearest slice."""

    grid: TorusGrid | DirichletDomain
    t0: float
    dt: float
    values: np.ndarray  # (nslices, *grid.shape)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError("field shape does not match the grid")

    @property
    def nslices(self) -> int:
        return self.values.shape[0]

    @property
    def t1(self) -> float:
        return self.t0 + (self.nslices - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nslices)

    def slice_index(self, t: float) -> int:
        j = int(round((t - self.t0) / self.dt))
        if j < 0 or j >= self.nslices:
            raise ValueError(f"time {t} outside the stored range [{self.t0}, {self.t1}]")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.values[self.slice_index(t)]

    def time_window(self, t_lo: float, t_hi: float) -> tuple[int, int]:
        """Slice index range [j0, j1] covering (t_lo, t_hi), snapped."""
        j0 = self.slice_index(max(t_lo, self.t0))
        j1 = self.slice_index(min(t_hi, self.t1))
        if j1 <= j0:
            raise ValueError("cylinder covers fewer than two time slices")
        return j0, j1


@dataclass
class EdgeField:
    """Antisymmetric values on directed edges at one time slice.

    data[i, x] is the value on the positively oriented edge (x, x+e_i).
    """

    grid: TorusGrid
    data: np.ndarray  # (dim, *shape)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError("edge data shape must be (dim, *grid.shape)")

    def value(self, x, y) -> float:
        """g(x, y) for neighboring sites x, y (periodic)."""
        dx = np.asarray(y) - np.asarray(x)
        dx = (dx + self.grid.radius) % self.grid.side - self.grid.radius
        (ax,) = np.nonzero(dx)[0:1][0] if np.count_nonzero(dx) == 1 else (None,)
        if ax is None or abs(dx[ax]) != 1:
            raise ValueError(f"{x} and {y} are not neighbors")
        if dx[ax] == 1:
            return float(self.data[(ax,) + self.grid.array_index(x)])
        return -float(self.data[(ax,) + self.grid.array_index(y)])


@dataclass
class EdgeTrajectory:
    """Time-indexed edge field: values (nslices, dim, *shape)."""

    grid: TorusGrid
    t0: float
    dt: float
    values: np.ndarray

    @property
    def nslices(self) -> int:
        return self.values.shape[0]

    @property
    def t1(self) -> float:
        return self.t0 + (self.nslices - 1) * self.dt

    def slice_index(self, t: float) -> int:
        j = int(round((t - self.t0) / self.dt))
        if j < 0 or j >= self.nslices:
            raise ValueError(f"time {t} outside the stored range")
        return j

    def time_window(self, t_lo: float, t_hi: float) -> tuple[int, int]:
        j0 = self.slice_index(max(t_lo, self.t0))
        j1 = self.slice_index(min(t_hi, self.t1))
        if j1 <= j0:
            raise ValueError("cylinder covers fewer than two time slices")
        return j0, j1


# ---------------------------------------------------------------------------
# discrete differential calculus
# ---------------------------------------------------------------------------

def forward_gradients(u: np.ndarray, periodic: bool = True) -> np.ndarray:
    """All forward differences of a slice: out[i] = u(.+e_i) - u(.).

    For non-periodic data the wrapped entries are meaningless and must be
    masked by the caller.
    """
    d = u.ndim
    out = np.empty((d,) + u.shape, dtype=np.float64)
    for ax in range(d):
        out[ax] = np.roll(u, -1, axis=ax) - u
    return out


def grad(grid, u: np.ndarray, x, y) -> float:
    """Discrete gradient u(y) - u(x) on a directed edge; 1/mesh-scaled on
    Dirichlet domains."""
    if isinstance(grid, TorusGrid):
        return float(u[grid.array_index(y)] - u[grid.array_index(x)])
    xi, yi = tuple(x), tuple(y)
    for p in (xi, yi):
        if not all(0 <= c <= grid.resolution for c in p):
            raise ValueError(f"site {p} outside the domain and its boundary")
    if sum(abs(a - b) for a, b in zip(xi, yi)) != 1:
        raise ValueError(f"{x} and {y} are not neighbors")
    return float(u[yi] - u[xi]) / grid.mesh


def divergence_field(g: np.ndarray) -> np.ndarray:
    """Divergence of an edge array (dim, *shape) at every torus site."""
    d = g.shape[0]
    out = np.zeros(g.shape[1:], dtype=np.float64)
    for ax in range(d):
        out += g[ax] - np.roll(g[ax], 1, axis=ax)
    return out


def divergence(g: EdgeField, x) -> float:
    """Sum of g(x, y) over the 2*dim neighbors y of x."""
    return float(divergence_field(g.data)[g.grid.array_index(x)])


def nonlinear_div_field(V, q, u: np.ndarray) -> np.ndarray:
    """The drift field x -> sum_y V'(q.(y-x) + u(y) - u(x)) on the torus."""
    d = u.ndim
    out = np.zeros_like(u)
    for ax in range(d):
        g = np.roll(u, -1, axis=ax) - u
        if q is not None:
            g = g + q[ax]
        f = V.vp(g)
        out += f - np.roll(f, 1, axis=ax)
    return out


def nonlinear_div(V, q, u: np.ndarray, x) -> float:
    """Pointwise value of the uniformly convex elliptic operator at site x."""
    return float(nonlinear_div_field(V, np.asarray(q, dtype=float), u)[
        tuple((np.asarray(x) + (u.shape[0] - 1) // 2) % u.shape[0])])


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def cylinder_average(f, Q: ParabolicCylinder):
    """Space-time average (f)_Q.

    Scalar fields give a real; edge trajectories give the vector whose i-th
    component averages the values on the (x, x+e_i) edges of the box.
    """
    j0, j1 = f.time_window(Q.t_lo, Q.t_hi)
    w = _trapezoid_weights(j1 - j0 + 1)
    w = w / w.sum()
    if isinstance(f, SpaceTimeField):
        vals = f.values[j0:j1 + 1]
        if Q.radius is not None:
            box = f.grid.box_slices(Q.radius, Q.center)
            vals = vals[(slice(None),) + box]
        spatial = vals.mean(axis=tuple(range(1, vals.ndim)))
        return float(np.dot(w, spatial))
    if isinstance(f, EdgeTrajectory):
        vals = f.values[j0:j1 + 1]
        if Q.radius is not None:
            box = f.grid.box_slices(Q.radius, Q.center)
            vals = vals[(slice(None), slice(None)) + box]
        spatial = vals.mean(axis=tuple(range(2, vals.ndim)))
        return w @ spatial
    raise TypeError(f"cannot average object of type {type(f)!r}")


# ---------------------------------------------------------------------------
# triadic partitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionCell:
    """Half-open space-time block (t_origin - 9^m, t_origin] x prod [x_i, x_i + 3^m)."""

    t_origin: float
    x_origin: tuple[int, ...]
    scale: int  # m: temporal extent 9^m, spatial side 3^m


def partition_cells(m: int, n: int, d: int = 2) -> list[PartitionCell]:
    """Origins of the scale-m blocks tiling the scale-n cylinder.

    The tiling uses half-open blocks of temporal length 9^m and spatial
    side 3^m, so exactly 3^((d+2)(n-m)) cells cover the cylinder of
    temporal length 9^n and spatial side 3^n, disjointly.
    """
    if m < 0 or m > n:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    t_cells = 9 ** (n - m)
    s_cells = 3 ** (n - m)
    block = 3**m
    cells = []
    for j in range(t_cells):
        t_origin = -float(j * 9**m)
        for flat in np.ndindex(*(s_cells,) * d):
            x_origin = tuple(int(a * block) for a in flat)
            cells.append(PartitionCell(t_origin, x_origin, m))
    return cells
