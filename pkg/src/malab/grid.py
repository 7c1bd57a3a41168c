"""Uniform masked grids over convex domains with curved-boundary cut arms.

Nodes are lattice points of spacing h inside the closed domain, stored as a
flat list in row-major scan order.  A node is *interior* when all four axis
neighbors are also in the domain and *boundary-adjacent* otherwise.  For
every stencil direction, each node carries either its in-domain neighbor or
the fraction theta in (0, 1] at which the stencil ray meets the boundary,
plus the crossing point (the boundary trace): one-sided Shortley-Weller
differences and Dirichlet lifting both read this table.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import ConvexDomain
from .errors import MalabError, ResolutionError

MASK_OUT, MASK_INTERIOR, MASK_RING = 0, 1, 2

AXIS_DIRS = ((1, 0), (0, 1))
DIAG_DIRS = ((1, 1), (1, -1))
WIDE_DIRS = AXIS_DIRS + DIAG_DIRS + ((2, 1), (1, 2), (2, -1), (1, -2))

# arms shorter than this fraction of a step are clamped; keeps cut-face
# weights bounded without moving the boundary more than 0.01 h
_THETA_MIN = 1e-2


@dataclass(frozen=True)
class ArmTable:
    """Per-node stencil arm in one signed direction."""

    neighbor: np.ndarray   # (n,) linear index of the in-domain neighbor, -1 if cut
    theta: np.ndarray      # (n,) arm length fraction; 1 for full arms
    point: np.ndarray      # (n, 2) boundary crossing for cut arms, nan otherwise

    @property
    def cut(self) -> np.ndarray:
        return self.neighbor < 0


@dataclass(frozen=True)
class Grid:
    domain: ConvexDomain
    h: float
    origin: tuple[float, float]
    shape: tuple[int, int]            # (ny, nx) of the covering lattice box
    mask: np.ndarray                  # (ny, nx) int8: 0 out, 1 interior, 2 ring
    lin: np.ndarray                   # (ny, nx) linear node index or -1
    ij: np.ndarray                    # (n, 2) (iy, ix) per node
    xy: np.ndarray                    # (n, 2) node coordinates
    arms: dict                        # signed direction -> ArmTable
    ring_projection: np.ndarray       # (n, 2) nearest boundary point (nan off-ring)
    ring_distance: np.ndarray         # (n,) distance to it (nan off-ring)

    @property
    def n_nodes(self) -> int:
        return self.xy.shape[0]

    @property
    def node_mask(self) -> np.ndarray:
        """Per-node mask value (1 interior, 2 boundary-adjacent)."""
        return self.mask[self.ij[:, 0], self.ij[:, 1]]

    @property
    def interior(self) -> np.ndarray:
        return self.node_mask == MASK_INTERIOR

    @property
    def ring(self) -> np.ndarray:
        return self.node_mask == MASK_RING

    def arm(self, d: tuple[int, int]) -> ArmTable:
        return self.arms[d]

    def nearest_node(self, p, interior_only: bool = False) -> int:
        d2 = ((self.xy - np.asarray(p, float)) ** 2).sum(axis=1)
        if interior_only:
            d2 = np.where(self.interior, d2, np.inf)
        return int(np.argmin(d2))

    def check_mask_consistency(self) -> bool:
        """Every interior node has its four axis neighbors in the domain."""
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = self.arms[d]
            if np.any(t.cut & self.interior):
                return False
        return True


def discretize(domain: ConvexDomain, h: float) -> Grid:
    """Mask the h-lattice against the domain and build the arm tables.

    Rejects h above rho/2; the full-accuracy contract elsewhere assumes
    h <= rho/4 but diagnostic coarse grids down to rho/2 are permitted.
    """
    if h <= 0:
        raise ResolutionError("mesh width must be positive")
    if h > domain.rho / 2.0 + 1e-12:
        raise ResolutionError(
            f"h={h:g} too coarse for structural constant rho={domain.rho:g}"
            f" (need h <= rho/2)")
    n_bd = max(256, int(math.ceil(8.0 * domain.perimeter / h)))
    domain = domain.resample(n_bd)

    bx = domain.boundary[:, 0]
    by = domain.boundary[:, 1]
    # lattice aligned to multiples of h so refinement ladders nest
    ix0 = math.floor(bx.min() / h) - 2
    iy0 = math.floor(by.min() / h) - 2
    nx = math.ceil(bx.max() / h) + 2 - ix0 + 1
    ny = math.ceil(by.max() / h) + 2 - iy0 + 1
    origin = (ix0 * h, iy0 * h)

    xs = origin[0] + h * np.arange(nx)
    ys = origin[1] + h * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.inside(pts).reshape(ny, nx)

    mask = np.zeros((ny, nx), dtype=np.int8)
    mask[inside] = MASK_INTERIOR
    core = inside.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = np.zeros_like(inside)
        ys_src = slice(max(0, -dy), ny - max(0, dy))
        xs_src = slice(max(0, -dx), nx - max(0, dx))
        ys_dst = slice(max(0, dy), ny - max(0, -dy))
        xs_dst = slice(max(0, dx), nx - max(0, -dx))
        shifted[ys_dst, xs_dst] = inside[ys_src, xs_src]
        core &= shifted
    mask[inside & ~core] = MASK_RING

    lin = np.full((ny, nx), -1, dtype=np.int64)
    iy, ix = np.nonzero(mask > 0)
    lin[iy, ix] = np.arange(iy.size)
    ij = np.column_stack([iy, ix])
    xy = np.column_stack([origin[0] + h * ix, origin[1] + h * iy])

    arms = {}
    for d in WIDE_DIRS:
        for sd in (d, (-d[0], -d[1])):
            arms[sd] = _arm_table(domain, h, mask, lin, ij, xy, sd)

    ring_projection = np.full((xy.shape[0], 2), np.nan)
    ring_distance = np.full(xy.shape[0], np.nan)
    ring_sel = mask[ij[:, 0], ij[:, 1]] == MASK_RING
    if ring_sel.any():
        proj, dist = domain.nearest_boundary(xy[ring_sel])
        ring_projection[ring_sel] = proj
        ring_distance[ring_sel] = dist

    return Grid(domain=domain, h=h, origin=origin, shape=(ny, nx), mask=mask,
                lin=lin, ij=ij, xy=xy, arms=arms,
                ring_projection=ring_projection, ring_distance=ring_distance)


def _arm_table(domain, h, mask, lin, ij, xy, d) -> ArmTable:
    ny, nx = mask.shape
    jy = ij[:, 0] + d[1]
    jx = ij[:, 1] + d[0]
    ok = (jy >= 0) & (jy < ny) & (jx >= 0) & (jx < nx)
    neighbor = np.full(ij.shape[0], -1, dtype=np.int64)
    neighbor[ok] = lin[jy[ok], jx[ok]]
    theta = np.ones(ij.shape[0])
    point = np.full((ij.shape[0], 2), np.nan)
    cut = neighbor < 0
    if cut.any():
        step = np.array([d[0] * h, d[1] * h])
        th = domain.ray_cut(xy[cut], step)
        th = np.maximum(th, _THETA_MIN)
        theta[cut] = th
        point[cut] = xy[cut] + th[:, None] * step
    return ArmTable(neighbor=neighbor, theta=theta, point=point)


@dataclass
class ScalarField:
    """Nodal values of a function on a masked grid.

    ``trace`` optionally holds the Dirichlet values at the boundary crossings
    of each signed axis direction, aligned with the grid's arm tables; solvers
    fill it so downstream differences can reach the boundary.
    """

    grid: Grid
    values: np.ndarray                 # (n,)
    trace: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise MalabError("field values must match grid node count")

    def copy(self, values=None, name=None) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy() if values is None else values,
                           dict(self.trace), self.name if name is None else name)

    def check_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def boundary_trace(self) -> tuple[np.ndarray, np.ndarray]:
        """All boundary crossing points with their Dirichlet values."""
        pts, vals = [], []
        for d in self.trace:
            cut = self.grid.arm(d).cut
            pts.append(self.grid.arm(d).point[cut])
            vals.append(np.asarray(self.trace[d])[cut] if np.ndim(self.trace[d]) else
                        np.full(int(cut.sum()), self.trace[d]))
        if not pts:
            return np.empty((0, 2)), np.empty(0)
        return np.vstack(pts), np.concatenate(vals)


@dataclass
class SymmetricMatrixField:
    """Per-node 2x2 symmetric matrices (Hessians, cofactors)."""

    grid: Grid
    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray

    def __post_init__(self):
        for name in ("m11", "m12", "m22"):
            v = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, np.broadcast_to(v, (self.grid.n_nodes,)).copy())

    def frobenius(self) -> np.ndarray:
        return np.sqrt(self.m11 ** 2 + 2.0 * self.m12 ** 2 + self.m22 ** 2)

    def det(self) -> np.ndarray:
        return self.m11 * self.m22 - self.m12 ** 2

    def trace(self) -> np.ndarray:
        return self.m11 + self.m22

    def eig_min(self) -> np.ndarray:
        mid = 0.5 * (self.m11 + self.m22)
        rad = np.sqrt((0.5 * (self.m11 - self.m22)) ** 2 + self.m12 ** 2)
        return mid - rad

    def eig_max(self) -> np.ndarray:
        mid = 0.5 * (self.m11 + self.m22)
        rad = np.sqrt((0.5 * (self.m11 - self.m22)) ** 2 + self.m12 ** 2)
        return mid + rad


@dataclass
class VectorField:
    """Per-node 2-vectors; carries its max Euclidean norm."""

    grid: Grid
    f1: np.ndarray
    f2: np.ndarray

    def __post_init__(self):
        self.f1 = np.broadcast_to(np.asarray(self.f1, float), (self.grid.n_nodes,)).copy()
        self.f2 = np.broadcast_to(np.asarray(self.f2, float), (self.grid.n_nodes,)).copy()

    @property
    def sup_norm(self) -> float:
        return float(np.hypot(self.f1, self.f2).max())


def vector_field_from_callable(grid: Grid, fn) -> VectorField:
    f1, f2 = fn(grid.xy[:, 0], grid.xy[:, 1])
    return VectorField(grid, np.broadcast_to(np.asarray(f1, float), (grid.n_nodes,)),
                       np.broadcast_to(np.asarray(f2, float), (grid.n_nodes,)))


def field_from_callable(grid: Grid, fn, name: str = "", with_trace: bool = False) -> ScalarField:
    vals = fn(grid.xy[:, 0], grid.xy[:, 1])
    vals = np.broadcast_to(np.asarray(vals, float), (grid.n_nodes,)).copy()
    f = ScalarField(grid, vals, name=name)
    if with_trace:
        attach_trace(f, fn)
    return f


def attach_trace(f: ScalarField, fn) -> ScalarField:
    """Evaluate a boundary callable at every axis-arm crossing."""
    for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        t = f.grid.arm(d)
        vals = np.zeros(f.grid.n_nodes)
        if t.cut.any():
            p = t.point[t.cut]
            vals[t.cut] = fn(p[:, 0], p[:, 1])
        f.trace[d] = vals
    return f


def gradient(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Nodal gradient from face differences averaged over opposite arms.

    Cut arms use the trace value at the crossing when the field carries one,
    otherwise fall back to the one-sided in-domain difference.
    """
    g = f.grid
    h = g.h
    out = []
    for dpos, dneg in (((1, 0), (-1, 0)), ((0, 1), (0, -1))):
        tp, tn = g.arm(dpos), g.arm(dneg)
        up = np.where(tp.cut, 0.0, f.values[np.maximum(tp.neighbor, 0)])
        un = np.where(tn.cut, 0.0, f.values[np.maximum(tn.neighbor, 0)])
        thp = np.where(tp.cut, tp.theta, 1.0)
        thn = np.where(tn.cut, tn.theta, 1.0)
        if dpos in f.trace:
            up = np.where(tp.cut, f.trace[dpos], up)
        else:
            up = np.where(tp.cut, f.values, up)
            thp = np.where(tp.cut, 0.0, thp)
        if dneg in f.trace:
            un = np.where(tn.cut, f.trace[dneg], un)
        else:
            un = np.where(tn.cut, f.values, un)
            thn = np.where(tn.cut, 0.0, thn)
        span = (thp + thn) * h
        span = np.where(span <= 0, 1.0, span)
        out.append((up - un) / span)
    return out[0], out[1]


def dump_grid(f: ScalarField, path_or_buf) -> None:
    """Plain-text node table: `x y mask value` rows."""
    g = f.grid
    own = isinstance(path_or_buf, (str, bytes))
    buf = open(path_or_buf, "w") if own else path_or_buf
    try:
        buf.write(f"# h={g.h:.12g} domain={g.domain.kind}\n")
        m = g.node_mask
        for k in range(g.n_nodes):
            buf.write(f"{g.xy[k, 0]:.12g} {g.xy[k, 1]:.12g} {int(m[k])} "
                      f"{f.values[k]:.12g}\n")
    finally:
        if own:
            buf.close()


def load_grid_values(grid: Grid, path_or_buf) -> ScalarField:
    """Read a dump produced on the same domain/h and map values onto nodes."""
    own = isinstance(path_or_buf, (str, bytes))
    buf = open(path_or_buf) if own else path_or_buf
    try:
        header = buf.readline()
        if not header.startswith("#"):
            raise MalabError("grid dump missing header line")
        data = np.loadtxt(buf, ndmin=2)
    finally:
        if own:
            buf.close()
    if data.shape[0] != grid.n_nodes:
        raise MalabError(
            f"dump has {data.shape[0]} nodes, grid has {grid.n_nodes}")
    # tolerate permuted rows: match by lattice index
    ixf = np.rint((data[:, 0] - grid.origin[0]) / grid.h).astype(int)
    iyf = np.rint((data[:, 1] - grid.origin[1]) / grid.h).astype(int)
    linidx = grid.lin[iyf, ixf]
    if np.any(linidx < 0):
        raise MalabError("dump contains nodes outside the grid mask")
    vals = np.empty(grid.n_nodes)
    vals[linidx] = data[:, 3]
    return ScalarField(grid, vals)


def prolong(coarse: ScalarField, fine: Grid) -> np.ndarray:
    """Bilinear interpolation of a coarse field onto a finer grid's nodes.

    Fine nodes outside the coarse lattice cell structure (fresh boundary
    nodes) fall back to the nearest in-mask coarse value.
    """
    cg = coarse.grid
    fx = (fine.xy[:, 0] - cg.origin[0]) / cg.h
    fy = (fine.xy[:, 1] - cg.origin[1]) / cg.h
    ny, nx = cg.shape
    ix = np.clip(np.floor(fx).astype(int), 0, nx - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, ny - 2)
    tx = np.clip(fx - ix, 0.0, 1.0)
    ty = np.clip(fy - iy, 0.0, 1.0)

    vals2d = np.zeros(cg.shape)
    vals2d[cg.ij[:, 0], cg.ij[:, 1]] = coarse.values
    have = cg.mask > 0
    # fill just outside the mask so interpolation cells at the rim are usable
    filled = vals2d.copy()
    known = have.copy()
    for _ in range(3):
        grow = np.zeros_like(filled)
        cnt = np.zeros(cg.shape)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            src_y = slice(max(0, -dy), ny - max(0, dy))
            src_x = slice(max(0, -dx), nx - max(0, dx))
            dst_y = slice(max(0, dy), ny - max(0, -dy))
            dst_x = slice(max(0, dx), nx - max(0, -dx))
            grow[dst_y, dst_x] += np.where(known[src_y, src_x], filled[src_y, src_x], 0.0)
            cnt[dst_y, dst_x] += known[src_y, src_x]
        new = ~known & (cnt > 0)
        filled[new] = grow[new] / cnt[new]
        known |= new

    v00 = filled[iy, ix]
    v10 = filled[iy, ix + 1]
    v01 = filled[iy + 1, ix]
    v11 = filled[iy + 1, ix + 1]
    return ((1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10
            + (1 - tx) * ty * v01 + tx * ty * v11)


def write_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def dump_to_string(f: ScalarField) -> str:
    buf = io.StringIO()
    dump_grid(f, buf)
    return buf.getvalue()
