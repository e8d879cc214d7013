"""Domains, structured grids, scalar fields, interpolation and quadrature.

Everything downstream computes on a node-centered tensor grid over the
bounding box of a planar domain described by an analytic signed distance
function.  Grids and fields are immutable after construction; all
operations here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

__all__ = [
    "Domain",
    "Grid",
    "ScalarField",
    "GeometryError",
    "OutsideDomainError",
    "unit_square",
    "unit_disk",
    "rectangle",
    "build_grid",
    "field_from_function",
    "interpolate",
    "integrate",
    "gradient",
    "INTERIOR",
    "BOUNDARY",
    "EXTERIOR",
]

# node classification codes
INTERIOR = 0
BOUNDARY = 1
EXTERIOR = 2


class GeometryError(ValueError):
    pass


class OutsideDomainError(GeometryError):
    """Raised when a point query falls outside the closed domain."""


@dataclass(frozen=True)
class Domain:
    """Bounded open planar domain with an analytic signed distance function.

    kind is one of "unit-square", "unit-disk", "rectangle".  The signed
    distance is negative inside, zero on the boundary.  The unit disk is
    centered at the origin with radius 1; rectangles span (0,w) x (0,h).
    """

    kind: str
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.kind not in ("unit-square", "unit-disk", "rectangle"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError("rectangle sides must be positive")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the bounding box."""
        if self.kind == "unit-disk":
            return (-1.0, 1.0, -1.0, 1.0)
        return (0.0, self.width, 0.0, self.height)

    def sdf(self, x, y):
        """Signed distance to the boundary, negative inside."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "unit-disk":
            return np.hypot(x, y) - 1.0
        hx, hy = self.width / 2.0, self.height / 2.0
        qx = np.abs(x - hx) - hx
        qy = np.abs(y - hy) - hy
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside

    def contains(self, x, y, tol: float = 0.0):
        return self.sdf(x, y) <= tol

    def project_to_boundary(self, x: float, y: float) -> tuple[float, float]:
        """Closest boundary point (exact for the supported shapes)."""
        if self.kind == "unit-disk":
            r = math.hypot(x, y)
            if r == 0.0:
                return (1.0, 0.0)
            return (x / r, y / r)
        # axis-aligned box: clamp, then push interior points to nearest side
        px = min(max(x, 0.0), self.width)
        py = min(max(y, 0.0), self.height)
        if (px, py) != (x, y) or px in (0.0, self.width) or py in (0.0, self.height):
            return (px, py)
        dx = min(px, self.width - px)
        dy = min(py, self.height - py)
        if dx <= dy:
            return (0.0 if px <= self.width - px else self.width, py)
        return (px, 0.0 if py <= self.height - py else self.height)

    def crossing_fraction(self, x, y, dx, dy, step):
        """Fraction t in (0,1] where the segment from (x,y) along
        step*(dx,dy) crosses the boundary.  (x,y) must be inside and the
        far end outside or on the boundary.  Vectorized; exact roots."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.kind == "unit-disk":
            # |p + t*step*d|^2 = 1, (dx,dy) a unit axis vector
            a = step * step
            b = 2.0 * step * (x * dx + y * dy)
            c = x * x + y * y - 1.0
            disc = np.maximum(b * b - 4 * a * c, 0.0)
            t = (-b + np.sqrt(disc)) / (2 * a)
            return np.clip(t, 1e-12, 1.0)
        # box faces are coordinate planes; grid nodes sit on them exactly,
        # so a non-interior neighbor of an interior node crosses at t=1
        if dx > 0:
            t = (self.width - x) / step
        elif dx < 0:
            t = x / step
        elif dy > 0:
            t = (self.height - y) / step
        else:
            t = y / step
        return np.clip(t, 1e-12, 1.0)


def unit_square() -> Domain:
    return Domain("unit-square", 1.0, 1.0)


def unit_disk() -> Domain:
    return Domain("unit-disk")


def rectangle(width: float, height: float) -> Domain:
    return Domain("rectangle", float(width), float(height))


def _disk_cell_area(x0, x1, y0, y1) -> float:
    """Exact area of [x0,x1]x[y0,y1] intersected with the unit disk."""
    # quick accept/reject
    cx = min(max(0.0, x0), x1)
    cy = min(max(0.0, y0), y1)
    if cx * cx + cy * cy >= 1.0:
        return 0.0
    corners = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)]
    if all(u * u + v * v <= 1.0 for u, v in corners):
        return (x1 - x0) * (y1 - y0)

    def seg(u):
        s = math.sqrt(max(1.0 - u * u, 0.0))
        lo = max(y0, -s)
        hi = min(y1, s)
        return max(hi - lo, 0.0)

    a = max(x0, -1.0)
    b = min(x1, 1.0)
    if a >= b:
        return 0.0
    # integrand is piecewise smooth; split at the y-level crossings
    pts = []
    for yy in (y0, y1):
        if -1.0 < yy < 1.0:
            u = math.sqrt(1.0 - yy * yy)
            for c in (-u, u):
                if a < c < b:
                    pts.append(c)
    val, _ = quad(seg, a, b, points=sorted(set(pts)) or None, limit=200)
    return val


@dataclass(frozen=True)
class Grid:
    """Node-centered tensor grid over the domain bounding box.

    n nodes per axis; spacing hx, hy per axis.  kind[i, j] classifies node
    (xs[i], ys[j]).  interior_index maps interior nodes bijectively onto
    0..n_interior-1 in C scan order; cell_weights holds the area of each
    node cell clipped to the domain (the quadrature weights).
    """

    domain: Domain
    n: int
    xs: np.ndarray
    ys: np.ndarray
    hx: float
    hy: float
    kind: np.ndarray
    interior_index: np.ndarray
    interior_ij: np.ndarray  # (n_interior, 2) int
    boundary_projection: dict = field(repr=False)
    cell_weights: np.ndarray = field(repr=False)

    @property
    def n_interior(self) -> int:
        return self.interior_ij.shape[0]

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    def node_xy(self, i, j):
        return self.xs[i], self.ys[j]

    def interior_values(self, values: np.ndarray) -> np.ndarray:
        ii, jj = self.interior_ij[:, 0], self.interior_ij[:, 1]
        return values[ii, jj]

    def scatter_interior(self, vec: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.n, self.n), fill, dtype=float)
        ii, jj = self.interior_ij[:, 0], self.interior_ij[:, 1]
        out[ii, jj] = vec
        return out


def build_grid(domain: Domain, n: int) -> Grid:
    """Build an n-by-n node grid over the domain bounding box.

    Nodes strictly inside the domain are interior; non-interior nodes with
    an interior axis neighbor (or lying on the boundary) are boundary
    nodes and carry their projection onto the boundary; the rest are
    exterior.
    """
    if n < 3:
        raise GeometryError("need n >= 3 nodes per axis")
    xmin, xmax, ymin, ymax = domain.bbox
    xs = np.linspace(xmin, xmax, n)
    ys = np.linspace(ymin, ymax, n)
    hx = (xmax - xmin) / (n - 1)
    hy = (ymax - ymin) / (n - 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    sd = domain.sdf(X, Y)
    geom_tol = 1e-12 * max(xmax - xmin, ymax - ymin)

    interior = sd < -geom_tol
    if not interior.any():
        raise GeometryError(f"resolution n={n} leaves no interior node")

    neighbor_interior = np.zeros_like(interior)
    neighbor_interior[1:, :] |= interior[:-1, :]
    neighbor_interior[:-1, :] |= interior[1:, :]
    neighbor_interior[:, 1:] |= interior[:, :-1]
    neighbor_interior[:, :-1] |= interior[:, 1:]

    on_boundary = np.abs(sd) <= geom_tol
    boundary = ~interior & (on_boundary | neighbor_interior)

    kind = np.full((n, n), EXTERIOR, dtype=np.uint8)
    kind[interior] = INTERIOR
    kind[boundary] = BOUNDARY

    interior_index = np.full((n, n), -1, dtype=np.int64)
    ii, jj = np.nonzero(interior)
    interior_index[ii, jj] = np.arange(ii.size)
    interior_ij = np.column_stack([ii, jj])

    # interior nodes may not touch exterior nodes along an axis
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni = ii + di
        nj = jj + dj
        ok = (ni >= 0) & (ni < n) & (nj >= 0) & (nj < n)
        if not ok.all() or (kind[ni, nj] == EXTERIOR).any():
            raise GeometryError("interior node with exterior axis neighbor")

    proj = {}
    for i, j in zip(*np.nonzero(boundary)):
        proj[(int(i), int(j))] = domain.project_to_boundary(xs[i], ys[j])

    weights = _cell_weights(domain, xs, ys, hx, hy, kind)

    return Grid(
        domain=domain,
        n=n,
        xs=xs,
        ys=ys,
        hx=hx,
        hy=hy,
        kind=kind,
        interior_index=interior_index,
        interior_ij=interior_ij,
        boundary_projection=proj,
        cell_weights=weights,
    )


def _cell_weights(domain, xs, ys, hx, hy, kind) -> np.ndarray:
    """Area of each node-centered cell clipped to the domain (exact)."""
    n = xs.size
    w = np.zeros((n, n))
    if domain.kind == "unit-disk":
        # fully-inside cells first, exact circular clipping for the rest
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        half_diag = math.hypot(hx, hy) / 2.0
        rr = np.hypot(X, Y)
        full = rr <= 1.0 - half_diag
        w[full] = hx * hy
        maybe = ~full & (rr < 1.0 + half_diag) & (kind != EXTERIOR)
        for i, j in zip(*np.nonzero(maybe)):
            w[i, j] = _disk_cell_area(
                xs[i] - hx / 2, xs[i] + hx / 2, ys[j] - hy / 2, ys[j] + hy / 2
            )
        return w
    # axis-aligned rectangle: product of 1-D overlaps, exact
    ox = np.minimum(xs + hx / 2, domain.width) - np.maximum(xs - hx / 2, 0.0)
    oy = np.minimum(ys + hy / 2, domain.height) - np.maximum(ys - hy / 2, 0.0)
    ox = np.clip(ox, 0.0, None)
    oy = np.clip(oy, 0.0, None)
    w[:, :] = np.outer(ox, oy)
    w[kind == EXTERIOR] = 0.0
    return w


@dataclass(frozen=True)
class ScalarField:
    """Nodal values of a function on a Grid (one value per node)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.n, self.grid.n):
            raise GeometryError("value array shape does not match grid")

    def _check_same_grid(self, other: "ScalarField"):
        if other.grid is not self.grid:
            raise GeometryError("field arithmetic requires the same grid")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            self._check_same_grid(other)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def max_interior(self) -> float:
        return float(self.grid.interior_values(self.values).max())

    def min_interior(self) -> float:
        return float(self.grid.interior_values(self.values).min())


def field_from_function(grid: Grid, f) -> ScalarField:
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    vals = np.asarray(f(X, Y), dtype=float)
    if vals.shape == ():
        vals = np.full((grid.n, grid.n), float(vals))
    return ScalarField(grid, vals)


def constant_field(grid: Grid, c: float) -> ScalarField:
    return ScalarField(grid, np.full((grid.n, grid.n), float(c)))


def interpolate(fld: ScalarField, p) -> float | np.ndarray:
    """Bilinear interpolation from the enclosing cell; exact for affine
    functions.  p is (2,) or (k, 2); points must lie in the closed domain.
    """
    grid = fld.grid
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    tol = 1e-12 * max(grid.hx, grid.hy)
    if (grid.domain.sdf(pts[:, 0], pts[:, 1]) > tol).any():
        raise OutsideDomainError("interpolation point outside the domain")
    fx = (pts[:, 0] - grid.xs[0]) / grid.hx
    fy = (pts[:, 1] - grid.ys[0]) / grid.hy
    i = np.clip(np.floor(fx).astype(int), 0, grid.n - 2)
    j = np.clip(np.floor(fy).astype(int), 0, grid.n - 2)
    tx = fx - i
    ty = fy - j
    v = fld.values
    out = (
        v[i, j] * (1 - tx) * (1 - ty)
        + v[i + 1, j] * tx * (1 - ty)
        + v[i, j + 1] * (1 - tx) * ty
        + v[i + 1, j + 1] * tx * ty
    )
    if np.asarray(p).ndim == 1:
        return float(out[0])
    return out


def integrate(fld: ScalarField) -> float:
    """Quadrature over the domain: node values times clipped cell areas.

    Exact for bilinear integrands on axis-aligned domains; second-order
    for smooth integrands, first-order terms only from curved-boundary
    cells.
    """
    return float(np.sum(fld.values * fld.grid.cell_weights))


def gradient(fld: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Central differences at interior nodes, one-sided where a neighbor
    is exterior; exact for affine fields.  Zero at exterior nodes."""
    grid = fld.grid
    n = grid.n
    v = fld.values
    usable = grid.kind != EXTERIOR
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)

    for axis, g, h in ((0, gx, grid.hx), (1, gy, grid.hy)):
        plus = np.zeros((n, n), dtype=bool)
        minus = np.zeros((n, n), dtype=bool)
        vp = np.zeros_like(v)
        vm = np.zeros_like(v)
        if axis == 0:
            plus[:-1, :] = usable[1:, :]
            minus[1:, :] = usable[:-1, :]
            vp[:-1, :] = v[1:, :]
            vm[1:, :] = v[:-1, :]
        else:
            plus[:, :-1] = usable[:, 1:]
            minus[:, 1:] = usable[:, :-1]
            vp[:, :-1] = v[:, 1:]
            vm[:, 1:] = v[:, :-1]
        central = usable & plus & minus
        fwd = usable & plus & ~minus
        bwd = usable & minus & ~plus
        g[central] = (vp[central] - vm[central]) / (2 * h)
        g[fwd] = (vp[fwd] - v[fwd]) / h
        g[bwd] = (v[bwd] - vm[bwd]) / h
    return ScalarField(grid, gx), ScalarField(grid, gy)


def dump_field_csv(fld: ScalarField, path) -> None:
    """Write `x,y,value` rows (row-major over nodes, exterior omitted)."""
    grid = fld.grid
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for i in range(grid.n):
            for j in range(grid.n):
                if grid.kind[i, j] == EXTERIOR:
                    continue
                fh.write(f"{grid.xs[i]!r},{grid.ys[j]!r},{fld.values[i, j]!r}\n")


def load_field_csv(grid: Grid, path) -> ScalarField:
    """Read a field written by dump_field_csv onto a matching grid."""
    vals = np.zeros((grid.n, grid.n))
    seen = np.zeros((grid.n, grid.n), dtype=bool)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,value":
            raise GeometryError(f"bad field CSV header {header!r}")
        for line in fh:
            sx, sy, sv = line.strip().split(",")
            x, y, v = float(sx), float(sy), float(sv)
            i = int(round((x - grid.xs[0]) / grid.hx))
            j = int(round((y - grid.ys[0]) / grid.hy))
            if not (0 <= i < grid.n and 0 <= j < grid.n):
                raise GeometryError("field CSV node off the grid")
            if abs(grid.xs[i] - x) > 1e-9 * grid.hx or abs(grid.ys[j] - y) > 1e-9 * grid.hy:
                raise GeometryError("field CSV nodes do not match the grid")
            vals[i, j] = v
            seen[i, j] = True
    missing = (grid.kind != EXTERIOR) & ~seen
    if missing.any():
        raise GeometryError("field CSV is missing grid nodes")
    return ScalarField(grid, vals)
