"""Structured triangulations of rectangles and interval meshes.

Meshes are immutable after construction (node/element arrays are marked
read-only) and safe to share across concurrent workers.  Node indices are
row-major from the lower-left corner (``index = j * nx + i``), so CSV dumps
are reproducible bit-for-bit.

Node classes partition the node set:

* ``INTERIOR``       - free degree of freedom,
* ``OUTER_BOUNDARY`` - node on the topological boundary of the rectangle,
* ``HOLE``           - node swallowed by a perforation (Dirichlet, value 0).

Each rectangle cell is split along the same diagonal into two right
triangles, which makes the stiffness matrix of ``-div(a I D.)`` with
elementwise-constant ``a > 0`` an M-matrix and hence gives a discrete weak
maximum principle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "INTERIOR",
    "OUTER_BOUNDARY",
    "HOLE",
    "CLASS_NAMES",
    "Mesh",
    "FieldFunction",
    "PerforationReport",
    "build_rectangle_mesh",
    "build_interval_mesh",
    "perforate",
    "extend_by_zero",
    "write_field_csv",
    "read_field_csv",
]

INTERIOR = 0
OUTER_BOUNDARY = 1
HOLE = 2
CLASS_NAMES = {INTERIOR: "interior", OUTER_BOUNDARY: "outer_boundary", HOLE: "hole"}
_CLASS_IDS = {name: cid for cid, name in CLASS_NAMES.items()}

#: float formatting used by every CSV writer (17 significant digits).
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class PerforationReport:
    """What ``perforate`` actually did: hole count, radii in grid units."""

    n_holes: int
    radius: float
    strategy: str
    centers: np.ndarray
    nodes_per_hole: np.ndarray
    min_resolved_radius_h: float
    max_resolved_radius_h: float


@dataclass(frozen=True)
class Mesh:
    """Structured simplicial mesh of an interval (dim 1) or rectangle (dim 2)."""

    dim: int
    nx: int
    ny: int
    width: float
    height: float
    nodes: np.ndarray
    elements: np.ndarray
    node_class: np.ndarray
    perforation: PerforationReport | None = None

    def __post_init__(self) -> None:
        for arr in (self.nodes, self.elements, self.node_class):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def h(self) -> float:
        """Grid spacing (cells are required to be square in 2-D)."""
        return self.width / (self.nx - 1)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        """Indices of interior (non-Dirichlet, non-hole) nodes."""
        out = np.flatnonzero(self.node_class == INTERIOR)
        out.setflags(write=False)
        return out

    @cached_property
    def areas(self) -> np.ndarray:
        """Element measures: triangle areas in 2-D, segment lengths in 1-D."""
        verts = self.nodes[self.elements]
        if self.dim == 1:
            out = np.abs(verts[:, 1, 0] - verts[:, 0, 0])
        else:
            e1 = verts[:, 1] - verts[:, 0]
            e2 = verts[:, 2] - verts[:, 0]
            out = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        out.setflags(write=False)
        return out

    @cached_property
    def grads(self) -> np.ndarray:
        """P1 basis gradients, shape ``(n_elements, dim + 1, dim)`` (constant per element)."""
        verts = self.nodes[self.elements]
        if self.dim == 1:
            h = (verts[:, 1, 0] - verts[:, 0, 0])[:, None, None]
            out = np.concatenate([-1.0 / h, 1.0 / h], axis=1)
        else:
            x = verts[..., 0]
            y = verts[..., 1]
            two_a = 2.0 * self.areas[:, None]
            # grad phi_i = (y_j - y_k, x_k - x_j) / (2 |T|), (i, j, k) cyclic
            b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
            c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
            out = np.stack([b, c], axis=2) / two_a[..., None]
        out.setflags(write=False)
        return out

    @cached_property
    def omega_eps_elements(self) -> np.ndarray:
        """Mask of elements belonging to the perforated domain (>= 1 non-hole vertex)."""
        hole = self.node_class[self.elements] == HOLE
        out = ~hole.all(axis=1)
        out.setflags(write=False)
        return out

    def element_means(self, values: np.ndarray) -> np.ndarray:
        """Average of a nodal field over each element's vertices."""
        return values[self.elements].mean(axis=1)


def _validate_counts(nx: int, ny: int) -> None:
    if nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 nodes per axis, got nx={nx}, ny={ny}")


def build_rectangle_mesh(width: float, height: float, nx: int, ny: int) -> Mesh:
    """Structured triangulation of ``[0, width] x [0, height]`` with ``nx * ny`` nodes.

    Every cell is split into two right triangles along the same diagonal,
    giving ``2 * (nx - 1) * (ny - 1)`` elements and no hole nodes.
    """
    _validate_counts(nx, ny)
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    hx = width / (nx - 1)
    hy = height / (ny - 1)
    if abs(hx - hy) > 1e-12 * max(hx, hy):
        raise ValueError(f"cells must be square: hx={hx!r} != hy={hy!r}")

    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    n00 = (j * nx + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * lower.shape[0], 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    node_class = np.full(nx * ny, INTERIOR, dtype=np.int8)
    ii = np.arange(nx * ny) % nx
    jj = np.arange(nx * ny) // nx
    node_class[(ii == 0) | (ii == nx - 1) | (jj == 0) | (jj == ny - 1)] = OUTER_BOUNDARY

    return Mesh(2, nx, ny, float(width), float(height), nodes, elements, node_class)


def build_interval_mesh(length: float, nx: int) -> Mesh:
    """Uniform mesh of ``[0, length]`` with ``nx`` nodes (1-D assembler mode)."""
    if nx < 2:
        raise ValueError(f"need at least 2 nodes, got nx={nx}")
    if length <= 0:
        raise ValueError("length must be positive")
    nodes = np.linspace(0.0, length, nx)[:, None]
    idx = np.arange(nx - 1)
    elements = np.column_stack([idx, idx + 1]).astype(np.int64)
    node_class = np.full(nx, INTERIOR, dtype=np.int8)
    node_class[[0, -1]] = OUTER_BOUNDARY
    return Mesh(1, nx, 1, float(length), 0.0, nodes, elements, node_class)


def _hole_centers(mesh: Mesh, epsilon: float) -> np.ndarray:
    """Cell-centered lattice of hole centers for a cell size of ``2 * epsilon``."""
    cell = 2.0 * epsilon
    mx = mesh.width / cell
    my = mesh.height / cell
    if abs(mx - round(mx)) > 1e-9 or abs(my - round(my)) > 1e-9:
        raise ValueError(
            f"domain {mesh.width} x {mesh.height} is not a whole number of 2*epsilon={cell} cells"
        )
    mx, my = int(round(mx)), int(round(my))
    cx = (2 * np.arange(mx) + 1) * epsilon
    cy = (2 * np.arange(my) + 1) * epsilon
    CX, CY = np.meshgrid(cx, cy, indexing="xy")
    return np.column_stack([CX.ravel(), CY.ravel()])


def perforate(mesh: Mesh, spec) -> Mesh:
    """Reclassify nodes inside a periodic lattice of disk holes as ``HOLE``.

    ``spec`` must provide ``epsilon`` (half cell size), ``radius`` and
    ``strategy`` (``"resolved"`` marks every node within ``radius`` of a hole
    center and needs ``h <= radius / 2``; ``"collapsed"`` marks the single
    nearest node per center and needs ``radius < h``).  Holes must stay
    strictly inside the domain and away from each other.
    """
    if mesh.dim != 2:
        raise ValueError("perforation requires a 2-D mesh")
    eps = float(spec.epsilon)
    r = float(spec.radius)
    strategy = spec.strategy
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if r < 0:
        raise ValueError("radius must be nonnegative")

    centers = _hole_centers(mesh, eps)
    n_holes = centers.shape[0]

    # geometric admissibility: strictly inside, pairwise disjoint
    margin = np.minimum.reduce(
        [centers[:, 0], mesh.width - centers[:, 0], centers[:, 1], mesh.height - centers[:, 1]]
    )
    if np.any(margin <= r):
        bad = int(np.argmin(margin))
        raise ValueError(f"hole at {tuple(centers[bad])} with radius {r} touches the outer boundary")
    if n_holes > 1:
        spacing = 2.0 * eps  # nearest lattice neighbours
        if spacing <= 2.0 * r:
            raise ValueError(f"holes of radius {r} overlap at lattice spacing {spacing}")

    h = mesh.h
    d2 = np.full(mesh.n_nodes, np.inf)
    nearest = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for k, c in enumerate(centers):
        dk = (mesh.nodes[:, 0] - c[0]) ** 2 + (mesh.nodes[:, 1] - c[1]) ** 2
        closer = dk < d2
        d2[closer] = dk[closer]
        nearest[closer] = k

    if strategy == "resolved":
        if h > r / 2.0:
            raise ValueError(f"resolved strategy needs h <= r/2, got h={h!r}, r={r!r}")
        hole_mask = d2 <= r * r
    elif strategy == "collapsed":
        if r >= h:
            raise ValueError(f"collapsed strategy needs r < h, got h={h!r}, r={r!r}")
        hole_mask = np.zeros(mesh.n_nodes, dtype=bool)
        for k, c in enumerate(centers):
            dk = (mesh.nodes[:, 0] - c[0]) ** 2 + (mesh.nodes[:, 1] - c[1]) ** 2
            hole_mask[int(np.argmin(dk))] = True
    else:
        raise ValueError(f"unknown hole strategy {strategy!r}")

    if np.any(hole_mask & (mesh.node_class == OUTER_BOUNDARY)):
        raise ValueError("a hole swallowed an outer boundary node")

    node_class = np.array(mesh.node_class, dtype=np.int8)
    node_class[hole_mask] = HOLE

    counts = np.bincount(nearest[hole_mask], minlength=n_holes)
    per_hole = np.zeros(n_holes)
    for k in range(n_holes):
        sel = hole_mask & (nearest == k)
        if sel.any():
            per_hole[k] = np.sqrt(d2[sel].max()) / h
    report = PerforationReport(
        n_holes=n_holes,
        radius=r,
        strategy=strategy,
        centers=centers,
        nodes_per_hole=counts,
        min_resolved_radius_h=float(per_hole.min()),
        max_resolved_radius_h=float(per_hole.max()),
    )
    centers.setflags(write=False)
    return replace(mesh, node_class=node_class, perforation=report)


@dataclass(frozen=True)
class FieldFunction:
    """Nodal scalar field over a mesh's degrees of freedom."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"field has {self.values.shape} values for {self.mesh.n_nodes} nodes"
            )
        self.values.setflags(write=False)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FieldFunction":
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def from_callable(cls, mesh: Mesh, fn: Callable[..., np.ndarray]) -> "FieldFunction":
        """Evaluate ``fn(x)`` (1-D) or ``fn(x, y)`` (2-D) at the nodes."""
        cols = [mesh.nodes[:, d] for d in range(mesh.dim)]
        return cls(mesh, np.asarray(fn(*cols), dtype=float) + np.zeros(mesh.n_nodes))

    def with_values(self, values: np.ndarray) -> "FieldFunction":
        return FieldFunction(self.mesh, np.asarray(values, dtype=float))

    def __add__(self, other: "FieldFunction") -> "FieldFunction":
        return FieldFunction(self.mesh, self.values + other.values)

    def __sub__(self, other: "FieldFunction") -> "FieldFunction":
        return FieldFunction(self.mesh, self.values - other.values)

    def __mul__(self, other) -> "FieldFunction":
        vals = other.values if isinstance(other, FieldFunction) else other
        return FieldFunction(self.mesh, self.values * vals)

    __rmul__ = __mul__


def h1_seminorm(u: FieldFunction | np.ndarray, mesh: Mesh | None = None) -> float:
    """Discrete H1 seminorm ``(sum_T |T| |Du|_T^2)^(1/2)`` over all elements."""
    if isinstance(u, FieldFunction):
        mesh, values = u.mesh, u.values
    else:
        values = u
    grad = np.einsum("evd,ev->ed", mesh.grads, values[mesh.elements])
    return float(np.sqrt(np.sum(mesh.areas * np.einsum("ed,ed->e", grad, grad))))


def _h1_seminorm_on(mesh: Mesh, values: np.ndarray, element_mask: np.ndarray) -> float:
    grad = np.einsum("evd,ev->ed", mesh.grads[element_mask], values[mesh.elements[element_mask]])
    return float(np.sqrt(np.sum(mesh.areas[element_mask] * np.einsum("ed,ed->e", grad, grad))))


def extend_by_zero(u: FieldFunction) -> FieldFunction:
    """Extension by zero across the holes (identity on the nodal vector).

    The input must already vanish at hole and outer-boundary nodes; a nonzero
    value at a hole node signals a solver fault.  Asserts the discrete H1
    seminorm over all elements equals the seminorm over the elements of the
    perforated domain (elements fully inside a hole contribute exactly 0).
    """
    mesh = u.mesh
    hole = mesh.node_class == HOLE
    if np.any(u.values[hole] != 0.0):
        bad = int(np.flatnonzero(hole & (u.values != 0.0))[0])
        raise ValueError(f"nonzero value {u.values[bad]!r} at hole node {bad}")
    full = h1_seminorm(u)
    on_eps = _h1_seminorm_on(mesh, u.values, mesh.omega_eps_elements)
    if abs(full - on_eps) > 1e-13 * max(full, 1e-300):
        raise AssertionError(
            f"extension is not an isometry: |u|_H1(Omega)={full!r} vs |u|_H1(Omega_eps)={on_eps!r}"
        )
    return u


def write_field_csv(path, field: FieldFunction | Mesh, values: np.ndarray | None = None) -> None:
    """Dump ``(node index, x, y, class, value)`` rows with 17-digit floats."""
    if isinstance(field, FieldFunction):
        mesh, values = field.mesh, field.values
    else:
        mesh = field
        if values is None:
            values = np.zeros(mesh.n_nodes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y", "class", "value"])
        y = mesh.nodes[:, 1] if mesh.dim == 2 else np.zeros(mesh.n_nodes)
        for i in range(mesh.n_nodes):
            writer.writerow(
                [
                    i,
                    FLOAT_FMT % mesh.nodes[i, 0],
                    FLOAT_FMT % y[i],
                    CLASS_NAMES[int(mesh.node_class[i])],
                    FLOAT_FMT % values[i],
                ]
            )


def read_field_csv(mesh: Mesh, path) -> FieldFunction:
    """Read a field written by ``write_field_csv`` back onto ``mesh``."""
    values = np.zeros(mesh.n_nodes)
    seen = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["index"])
            if not 0 <= i < mesh.n_nodes:
                raise ValueError(f"node index {i} out of range for mesh with {mesh.n_nodes} nodes")
            values[i] = float(row["value"])
            seen += 1
    if seen != mesh.n_nodes:
        raise ValueError(f"field file has {seen} rows, mesh has {mesh.n_nodes} nodes")
    return FieldFunction(mesh, values)
