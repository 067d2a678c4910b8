"""Uniform triangular meshes of a rectangular channel with edge metadata.

The channel (0, L) x (0, H) is meshed by a structured grid of square cells,
each split by the diagonal from the lower-left to the upper-right corner.
Edges are classified for the interior-penalty assembly: Dirichlet on the
vertical boundaries x1 = 0, L and Neumann on the channel walls x2 = 0, H.
"""

from dataclasses import dataclass, field

import numpy as np

_GEOM_TOL = 1e-12


class MeshError(ValueError):
    """Raised for inadmissible mesh construction inputs."""


@dataclass(frozen=True)
class Edge:
    """A mesh edge with assembly metadata.

    ``tris`` holds one triangle id for boundary edges and two for interior
    edges; the unit normal points out of ``tris[0]``.
    """

    vertices: tuple
    kind: str  # "interior" | "dirichlet" | "neumann"
    tris: tuple
    normal: np.ndarray
    length: float


@dataclass(frozen=True)
class EdgeFlowTag:
    """Inflow/outflow classification of an edge under the channel velocity."""

    edge: int
    tag: str  # "inflow" | "outflow"
    vn: float  # V . n at the edge midpoint


@dataclass(frozen=True)
class Mesh:
    L: float
    H: float
    dx: float
    vertices: np.ndarray  # (n_v, 2)
    triangles: np.ndarray  # (n_t, 3), counter-clockwise
    edges: list = field(repr=False)
    triangle_edges: np.ndarray = field(repr=False)  # (n_t, 3) edge ids
    areas: np.ndarray = field(repr=False)
    diameters: np.ndarray = field(repr=False)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def edge_midpoint(self, e):
        a, b = self.edges[e].vertices
        return 0.5 * (self.vertices[a] + self.vertices[b])


def velocity(x, vmax, H):
    """Parabolic channel velocity V(x) = (a x2 (H - x2), 0), a = 4 vmax / H^2."""
    x = np.asarray(x, dtype=float)
    a = 4.0 * vmax / H**2
    v = np.zeros_like(x)
    v[..., 0] = a * x[..., 1] * (H - x[..., 1])
    return v


def build_uniform_mesh(L, H, dx):
    """Build the structured triangulation of (0, L) x (0, H) with step dx."""
    if L <= 0 or H <= 0 or dx <= 0:
        raise MeshError("L, H and dx must be positive")
    nx = L / dx
    ny = H / dx
    if abs(nx - round(nx)) > 1e-9 * max(1.0, nx):
        raise MeshError(f"dx={dx} does not divide L={L}")
    if abs(ny - round(ny)) > 1e-9 * max(1.0, ny):
        raise MeshError(f"dx={dx} does not divide H={H}")
    nx, ny = int(round(nx)), int(round(ny))

    xs = np.linspace(0.0, L, nx + 1)
    ys = np.linspace(0.0, H, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    triangles = []
    for j in range(ny):
        for i in range(nx):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            # diagonal fixed lower-left -> upper-right
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    triangles = np.array(triangles, dtype=np.int64)

    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    areas = 0.5 * np.abs(
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )
    diameters = np.maximum.reduce(
        [
            np.linalg.norm(p1 - p0, axis=1),
            np.linalg.norm(p2 - p1, axis=1),
            np.linalg.norm(p0 - p2, axis=1),
        ]
    )

    # collect edges; deterministic ordering by sorted vertex pair
    edge_tris = {}
    for t, tri in enumerate(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edge_tris.setdefault(key, []).append(t)

    edges = []
    edge_id = {}
    for key in sorted(edge_tris):
        tris = tuple(edge_tris[key])
        a, b = key
        pa, pb = vertices[a], vertices[b]
        tang = pb - pa
        length = float(np.hypot(*tang))
        nrm = np.array([tang[1], -tang[0]]) / length
        # orient out of the first adjacent triangle
        centroid = vertices[triangles[tris[0]]].mean(axis=0)
        mid = 0.5 * (pa + pb)
        if np.dot(nrm, mid - centroid) < 0:
            nrm = -nrm
        kind = _edge_kind(pa, pb, L, H)
        if kind != "interior" and len(tris) != 1:
            raise MeshError(f"boundary edge {key} has {len(tris)} triangles")
        if kind == "interior" and len(tris) != 2:
            raise MeshError(f"interior edge {key} has {len(tris)} triangles")
        edge_id[key] = len(edges)
        edges.append(Edge(key, kind, tris, nrm, length))

    triangle_edges = np.empty((len(triangles), 3), dtype=np.int64)
    for t, tri in enumerate(triangles):
        for k, (a, b) in enumerate(
            ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))
        ):
            triangle_edges[t, k] = edge_id[(min(a, b), max(a, b))]

    return Mesh(L, H, dx, vertices, triangles, edges, triangle_edges, areas, diameters)


def _edge_kind(pa, pb, L, H):
    on_left = abs(pa[0]) < _GEOM_TOL and abs(pb[0]) < _GEOM_TOL
    on_right = abs(pa[0] - L) < _GEOM_TOL and abs(pb[0] - L) < _GEOM_TOL
    if on_left or on_right:
        return "dirichlet"
    on_bot = abs(pa[1]) < _GEOM_TOL and abs(pb[1]) < _GEOM_TOL
    on_top = abs(pa[1] - H) < _GEOM_TOL and abs(pb[1] - H) < _GEOM_TOL
    if on_bot or on_top:
        return "neumann"
    return "interior"


def classify_flow(mesh, vmax, H):
    """Tag every edge inflow/outflow by the sign of V . n at its midpoint.

    Edges with |V . n| below 1e-14 (the channel walls) are tagged outflow so
    that no upwind inflow contribution is ever added there.
    """
    if vmax < 0:
        raise ValueError("vmax must be non-negative")
    tags = []
    for e, edge in enumerate(mesh.edges):
        mid = mesh.edge_midpoint(e)
        vn = float(velocity(mid, vmax, H) @ edge.normal)
        tag = "inflow" if vn < -1e-14 else "outflow"
        tags.append(EdgeFlowTag(e, tag, vn))
    return tags


def write_vtk_mesh(mesh, path):
    """Dump the mesh as legacy ASCII VTK (UNSTRUCTURED_GRID, cell type 5)."""
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("fhnrom mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(mesh.vertices)} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x} {y} 0.0\n")
        nt = mesh.n_triangles
        f.write(f"CELLS {nt} {4 * nt}\n")
        for tri in mesh.triangles:
            f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("\n".join(["5"] * nt) + "\n")
