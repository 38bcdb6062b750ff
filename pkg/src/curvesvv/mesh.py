"""High-order 2D mesh data model.

Holds the mesh containers (nodes, elements, tagged boundary edges, node
metadata), the isoparametric and ideal element mappings with their Jacobians,
element validity checks, order elevation, and mesh file I/O (a versioned JSON
format plus a reader for a subset of the Gmsh 2.2 ASCII format).

Reference elements: the unit triangle with vertices (0,0), (1,0), (0,1) and
the unit square with vertices (0,0), (1,0), (1,1), (0,1).  Node ordering per
element: corner vertices, then edge-interior nodes edge by edge (each edge
runs from its first to its second vertex), then interior lattice nodes sorted
lexicographically by (xi2, xi1).  Lattice spacing is uniform (1/P).
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import polybasis as pb

__all__ = [
    "Element",
    "BoundaryEdge",
    "HighOrderMesh",
    "MeshParseError",
    "DomainError",
    "reference_nodes",
    "element_node_count",
    "map_physical",
    "ideal_map",
    "ideal_gradient",
    "jacobian",
    "validity",
    "elevate_order",
    "read_mesh",
    "write_mesh",
]

MESH_FORMAT = "curvesvv-mesh-1"
NODE_ORDERING = "vertices,edge-interior-per-edge,interior-lex-by-(xi2,xi1)"

_SHAPES = ("triangle", "quad")


class MeshParseError(ValueError):
    """Raised when a mesh file cannot be parsed; carries record context."""


class DomainError(ValueError):
    """Raised when a reference coordinate lies outside its element."""


@dataclass
class Element:
    shape: str
    order: int
    nodes: np.ndarray

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValueError(f"unsupported element shape {self.shape!r}")
        self.nodes = np.asarray(self.nodes, dtype=int)

    @property
    def num_vertices(self):
        return 3 if self.shape == "triangle" else 4

    @property
    def vertex_ids(self):
        return self.nodes[: self.num_vertices]

    def side_vertex_ids(self, side):
        nv = self.num_vertices
        return int(self.nodes[side]), int(self.nodes[(side + 1) % nv])

    def side_node_ids(self, side):
        """Ordered node ids along a side, endpoints included."""
        nv = self.num_vertices
        p = self.order
        a, b = self.side_vertex_ids(side)
        inner = self.nodes[nv + side * (p - 1): nv + (side + 1) * (p - 1)]
        return np.concatenate(([a], inner, [b]))


@dataclass
class BoundaryEdge:
    nodes: np.ndarray  # ordered along the edge, endpoints included
    tag: object  # patch id (int) or "farfield"

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=int)


class HighOrderMesh:
    """Nodes, elements, boundary edges and per-node geometry metadata."""

    def __init__(self, nodes, elements, boundary=None, node_patch=None, excluded=None):
        self.nodes = np.array(nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise ValueError("nodes must be an (N, 3) array")
        self.elements = list(elements)
        self.boundary = list(boundary) if boundary else []
        # node id -> (patch id, params tuple)
        self.node_patch = dict(node_patch) if node_patch else {}
        # node id -> exclusion reason
        self.excluded = dict(excluded) if excluded else {}
        self._check_indices()

    def _check_indices(self):
        n = len(self.nodes)
        for e, elem in enumerate(self.elements):
            if elem.nodes.min() < 0 or elem.nodes.max() >= n:
                raise ValueError(f"element {e} references a node out of range")
            if elem.nodes.size != element_node_count(elem.shape, elem.order):
                raise ValueError(
                    f"element {e}: expected "
                    f"{element_node_count(elem.shape, elem.order)} nodes, "
                    f"got {elem.nodes.size}"
                )
        for b, edge in enumerate(self.boundary):
            if edge.nodes.min() < 0 or edge.nodes.max() >= n:
                raise ValueError(f"boundary edge {b} references a node out of range")

    def copy(self):
        return HighOrderMesh(
            self.nodes.copy(),
            [Element(e.shape, e.order, e.nodes.copy()) for e in self.elements],
            [BoundaryEdge(b.nodes.copy(), b.tag) for b in self.boundary],
            dict(self.node_patch),
            dict(self.excluded),
        )

    def boundary_node_ids(self):
        ids = set()
        for edge in self.boundary:
            ids.update(int(i) for i in edge.nodes)
        return ids

    def node_to_elements(self):
        """Map node id -> list of indices of elements containing it."""
        out = {}
        for e, elem in enumerate(self.elements):
            for n in elem.nodes:
                out.setdefault(int(n), []).append(e)
        return out

    def vertex_edges(self):
        """Undirected element sides as a set of (lo, hi) vertex-id pairs."""
        edges = set()
        for elem in self.elements:
            for side in range(elem.num_vertices):
                a, b = elem.side_vertex_ids(side)
                edges.add((min(a, b), max(a, b)))
        return edges

    def edge_lengths_at(self, node):
        """Lengths of element sides having `node` as an endpoint."""
        lengths = []
        for a, b in self.vertex_edges():
            if node in (a, b):
                lengths.append(float(np.linalg.norm(self.nodes[a] - self.nodes[b])))
        return lengths

    def bbox_diagonal(self):
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return float(np.linalg.norm(span))


# ---------------------------------------------------------------------------
# reference lattices and shape functions
# ---------------------------------------------------------------------------

def _lattice_internal(shape, p):
    """Integer lattice coordinates in the package node ordering."""
    if shape == "triangle":
        verts = [(0, 0), (p, 0), (0, p)]
        edge_pairs = [(0, 1), (1, 2), (2, 0)]
    else:
        verts = [(0, 0), (p, 0), (p, p), (0, p)]
        edge_pairs = [(0, 1), (1, 2), (2, 3), (3, 0)]
    pts = list(verts)
    for a, b in edge_pairs:
        va, vb = np.array(verts[a]), np.array(verts[b])
        for k in range(1, p):
            pts.append(tuple(va + (vb - va) * k // p))
    interior = _interior_lattice(shape, p)
    pts.extend(sorted(interior, key=lambda ij: (ij[1], ij[0])))
    return pts


def _interior_lattice(shape, p):
    if shape == "triangle":
        return [(i, j) for j in range(1, p) for i in range(1, p - j)]
    return [(i, j) for j in range(1, p) for i in range(1, p)]


def _lattice_gmsh(shape, p):
    """Integer lattice coordinates in recursive Gmsh ordering."""
    if p == 0:
        return [(0, 0)]
    if shape == "triangle":
        verts = [(0, 0), (p, 0), (0, p)]
        edge_pairs = [(0, 1), (1, 2), (2, 0)]
        sub_order, offset = p - 3, 1
    else:
        verts = [(0, 0), (p, 0), (p, p), (0, p)]
        edge_pairs = [(0, 1), (1, 2), (2, 3), (3, 0)]
        sub_order, offset = p - 2, 1
    pts = list(verts)
    for a, b in edge_pairs:
        va, vb = np.array(verts[a]), np.array(verts[b])
        for k in range(1, p):
            pts.append(tuple(va + (vb - va) * k // p))
    if sub_order >= 0:
        for i, j in _lattice_gmsh(shape, sub_order):
            pts.append((i + offset, j + offset))
    return pts


def reference_nodes(shape, p):
    """Reference lattice coordinates, shape (n, 2), in package ordering."""
    if shape not in _SHAPES:
        raise ValueError(f"unsupported element shape {shape!r}")
    if p < 1:
        raise ValueError(f"order must be >= 1, got {p}")
    return np.array(_lattice_internal(shape, p), dtype=float) / p


def element_node_count(shape, p):
    if shape == "triangle":
        return (p + 1) * (p + 2) // 2
    if shape == "quad":
        return (p + 1) ** 2
    raise ValueError(f"unsupported element shape {shape!r}")


def gmsh_to_internal_permutation(shape, p):
    """perm[i] = internal index of the i-th node in Gmsh ordering."""
    internal = {pt: k for k, pt in enumerate(_lattice_internal(shape, p))}
    return np.array([internal[pt] for pt in _lattice_gmsh(shape, p)], dtype=int)


def _shifted_legendre_products(p, pts, shape):
    """Evaluate the modal set used to build triangle shape functions."""
    s = 2.0 * np.asarray(pts) - 1.0
    lx = pb.legendre_matrix(p, s[:, 0])
    ly = pb.legendre_matrix(p, s[:, 1])
    pairs = _mode_pairs(shape, p)
    vals = np.empty((len(pts), len(pairs)))
    for k, (a, b) in enumerate(pairs):
        vals[:, k] = lx[:, a] * ly[:, b]
    return vals


def _mode_pairs(shape, p):
    if shape == "triangle":
        return [(a, b) for b in range(p + 1) for a in range(p + 1 - b)]
    return [(a, b) for b in range(p + 1) for a in range(p + 1)]


def _shifted_legendre_grads(p, pts, shape):
    s = 2.0 * np.asarray(pts) - 1.0
    lx = pb.legendre_matrix(p, s[:, 0])
    ly = pb.legendre_matrix(p, s[:, 1])
    dlx = _legendre_deriv_matrix(p, s[:, 0])
    dly = _legendre_deriv_matrix(p, s[:, 1])
    pairs = _mode_pairs(shape, p)
    grads = np.empty((len(pts), len(pairs), 2))
    for k, (a, b) in enumerate(pairs):
        grads[:, k, 0] = 2.0 * dlx[:, a] * ly[:, b]
        grads[:, k, 1] = 2.0 * lx[:, a] * dly[:, b]
    return grads


def _legendre_deriv_matrix(order, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = pb.legendre_matrix(order, x)
    out = np.zeros((x.size, order + 1))
    if order >= 1:
        out[:, 1] = 1.0
    # (2k+1) P_k = (P_{k+1} - P_{k-1})' gives P'_{k+1} = P'_{k-1} + (2k+1) P_k
    for k in range(1, order):
        out[:, k + 1] = out[:, k - 1] + (2 * k + 1) * vals[:, k]
    return out


@lru_cache(maxsize=None)
def _shape_coeffs(shape, p):
    nodes = reference_nodes(shape, p)
    vand = _shifted_legendre_products(p, nodes, shape)
    return np.linalg.inv(vand)


def shape_functions(shape, p, pts):
    """Nodal shape function values, shape (npts, nfn)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return _shifted_legendre_products(p, pts, shape) @ _shape_coeffs(shape, p)


def shape_gradients(shape, p, pts):
    """Nodal shape function gradients, shape (npts, nfn, 2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    grads = _shifted_legendre_grads(p, pts, shape)
    coeffs = _shape_coeffs(shape, p)
    return np.einsum("qmd,mn->qnd", grads, coeffs)


def _inside_reference(shape, pts, tol=1e-12):
    pts = np.atleast_2d(pts)
    if shape == "triangle":
        return np.all(
            (pts[:, 0] >= -tol) & (pts[:, 1] >= -tol) & (pts.sum(axis=1) <= 1 + tol)
        )
    return np.all((pts >= -tol) & (pts <= 1 + tol))


# ---------------------------------------------------------------------------
# mappings
# ---------------------------------------------------------------------------

def map_physical(msh, elem, xi):
    """Isoparametric map of reference point(s) xi to physical space."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    if not _inside_reference(elem.shape, pts):
        raise DomainError(f"reference point outside {elem.shape}")
    vals = shape_functions(elem.shape, elem.order, pts)
    out = vals @ msh.nodes[elem.nodes]
    return out[0] if single else out


def ideal_map(msh, elem, xi):
    """Affine (triangle) or parallelogram-form (quad) map of the vertices."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    v = msh.nodes[elem.vertex_ids]
    if elem.shape == "triangle":
        out = v[0] + np.outer(pts[:, 0], v[1] - v[0]) + np.outer(pts[:, 1], v[2] - v[0])
    else:
        out = v[0] + np.outer(pts[:, 0], v[1] - v[0]) + np.outer(pts[:, 1], v[3] - v[0])
    return out[0] if single else out


def ideal_gradient(msh, elem):
    """Constant 2x2 gradient of the ideal map (in-plane components)."""
    v = msh.nodes[elem.vertex_ids][:, :2]
    if elem.shape == "triangle":
        return np.column_stack((v[1] - v[0], v[2] - v[0]))
    return np.column_stack((v[1] - v[0], v[3] - v[0]))


def jacobian(msh, elem, xi):
    """Mapping gradient(s) d(x,y)/d(xi1,xi2) and determinant(s) at xi."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    grads = shape_gradients(elem.shape, elem.order, pts)
    coords = msh.nodes[elem.nodes][:, :2]
    g = np.einsum("ni,qnd->qid", coords, grads)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    if single:
        return g[0], float(det[0])
    return g, det


def _sample_points(shape, rule):
    """Validity sampling points: mapped quadrature grid plus vertices."""
    t = 0.5 * (rule.points + 1.0)
    a, b = np.meshgrid(t, t, indexing="ij")
    a, b = a.ravel(), b.ravel()
    if shape == "triangle":
        pts = np.column_stack((a * (1.0 - b), b))  # collapsed-square sampling
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    else:
        pts = np.column_stack((a, b))
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return np.vstack((pts, verts))


def validity(msh, elem, rule=None):
    """Check element validity by Jacobian sampling.

    Returns (is_valid, scaled_jacobian) with scaled_jacobian the ratio of the
    smallest to largest sampled determinant.
    """
    if rule is None:
        rule = pb.gll_rule(elem.order + 3)
    pts = _sample_points(elem.shape, rule)
    _, det = jacobian(msh, elem, pts)
    dmin, dmax = float(det.min()), float(det.max())
    if dmax != 0.0:
        scaled = dmin / dmax
    else:
        scaled = -np.inf if dmin < 0 else 0.0
    return dmin > 0.0, scaled


def mesh_validity(msh, rule=None):
    """Per-element (is_valid, scaled_jacobian) list for the whole mesh."""
    return [validity(msh, elem, rule) for elem in msh.elements]


def invalid_elements(msh, rule=None):
    return [e for e, (ok, _) in enumerate(mesh_validity(msh, rule)) if not ok]


# ---------------------------------------------------------------------------
# order elevation
# ---------------------------------------------------------------------------

def elevate_order(msh, p):
    """Return a straight-sided copy of a linear mesh elevated to order p.

    Shared edge nodes are created once per undirected edge and placed
    linearly; element interior nodes come from the affine (triangle) or
    bilinear (quad) map of the vertices.  Boundary edges keep their tags and
    gain the shared edge nodes.
    """
    if p < 1:
        raise ValueError(f"target order must be >= 1, got {p}")
    for elem in msh.elements:
        if elem.order != 1:
            raise ValueError("elevate_order expects a linear mesh")
    coords = [row.copy() for row in msh.nodes]
    edge_nodes = {}

    def edge_ids(a, b):
        lo, hi = min(a, b), max(a, b)
        if (lo, hi) not in edge_nodes:
            ids = []
            for k in range(1, p):
                t = k / p
                coords.append((1 - t) * msh.nodes[lo] + t * msh.nodes[hi])
                ids.append(len(coords) - 1)
            edge_nodes[(lo, hi)] = ids
        ids = edge_nodes[(lo, hi)]
        return ids if a == lo else ids[::-1]

    elements = []
    for elem in msh.elements:
        nv = elem.num_vertices
        ids = list(elem.vertex_ids)
        for side in range(nv):
            a, b = elem.side_vertex_ids(side)
            ids.extend(edge_ids(a, b))
        verts = msh.nodes[elem.vertex_ids]
        for i, j in _interior_lattice_sorted(elem.shape, p):
            s, t = i / p, j / p
            if elem.shape == "triangle":
                pt = verts[0] + s * (verts[1] - verts[0]) + t * (verts[2] - verts[0])
            else:
                pt = (
                    (1 - s) * (1 - t) * verts[0]
                    + s * (1 - t) * verts[1]
                    + s * t * verts[2]
                    + (1 - s) * t * verts[3]
                )
            coords.append(pt)
            ids.append(len(coords) - 1)
        elements.append(Element(elem.shape, p, np.array(ids)))

    boundary = []
    for edge in msh.boundary:
        a, b = int(edge.nodes[0]), int(edge.nodes[-1])
        boundary.append(BoundaryEdge(np.array([a] + edge_ids(a, b) + [b]), edge.tag))

    return HighOrderMesh(
        np.array(coords), elements, boundary, dict(msh.node_patch), dict(msh.excluded)
    )


def _interior_lattice_sorted(shape, p):
    return sorted(_interior_lattice(shape, p), key=lambda ij: (ij[1], ij[0]))


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def write_mesh(msh, path):
    doc = {
        "format": MESH_FORMAT,
        "node_ordering": NODE_ORDERING,
        "nodes": msh.nodes.tolist(),
        "elements": [
            {"shape": e.shape, "order": e.order, "nodes": e.nodes.tolist()}
            for e in msh.elements
        ],
        "boundary": [
            {"nodes": b.nodes.tolist(), "tag": b.tag} for b in msh.boundary
        ],
        "node_patch": {
            str(n): {"patch": pid, "params": list(params)}
            for n, (pid, params) in msh.node_patch.items()
        },
        "excluded": {str(n): reason for n, reason in msh.excluded.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_mesh(path):
    path = str(path)
    if path.endswith(".msh"):
        return read_gmsh(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise MeshParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}")
    if not isinstance(doc, dict) or doc.get("format") != MESH_FORMAT:
        raise MeshParseError(f"{path}: missing or unsupported format tag")
    try:
        elements = [
            Element(e["shape"], int(e["order"]), np.array(e["nodes"]))
            for e in doc["elements"]
        ]
        boundary = [
            BoundaryEdge(np.array(b["nodes"]), b["tag"])
            for b in doc.get("boundary", [])
        ]
        node_patch = {
            int(n): (rec["patch"], tuple(rec["params"]))
            for n, rec in doc.get("node_patch", {}).items()
        }
        excluded = {int(n): r for n, r in doc.get("excluded", {}).items()}
        return HighOrderMesh(
            np.array(doc["nodes"], dtype=float),
            elements,
            boundary,
            node_patch,
            excluded,
        )
    except (KeyError, TypeError, ValueError) as err:
        raise MeshParseError(f"{path}: malformed mesh record: {err}")


# Gmsh element type -> (shape, order); lines become boundary edges
_GMSH_TYPES = {
    1: ("line", 1), 8: ("line", 2), 26: ("line", 3), 27: ("line", 4),
    2: ("triangle", 1), 9: ("triangle", 2), 21: ("triangle", 3), 23: ("triangle", 4),
    3: ("quad", 1), 10: ("quad", 2), 36: ("quad", 3), 37: ("quad", 4),
}


def _gmsh_line_permutation(p):
    # Gmsh lines: endpoints first, then interior nodes in order
    return np.array([0, p] + list(range(1, p)), dtype=int) if p > 1 else np.array([0, 1])


def read_gmsh(path):
    """Read a subset of the Gmsh 2.2 ASCII format (orders 1..4, 2D shapes)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    idx = {line.strip(): i for i, line in enumerate(lines)}
    for section in ("$Nodes", "$EndNodes", "$Elements", "$EndElements"):
        if section not in idx:
            raise MeshParseError(f"{path}: missing section {section}")
    try:
        n_nodes = int(lines[idx["$Nodes"] + 1])
        raw = lines[idx["$Nodes"] + 2: idx["$Nodes"] + 2 + n_nodes]
        if len(raw) != n_nodes:
            raise MeshParseError(f"{path}: truncated $Nodes section")
        ids, coords = [], []
        for ln, row in enumerate(raw, start=idx["$Nodes"] + 3):
            parts = row.split()
            if len(parts) != 4:
                raise MeshParseError(f"{path}:{ln}: bad node record {row!r}")
            ids.append(int(parts[0]))
            coords.append([float(v) for v in parts[1:]])
        remap = {gid: k for k, gid in enumerate(ids)}
        nodes = np.array(coords)

        n_elem = int(lines[idx["$Elements"] + 1])
        raw = lines[idx["$Elements"] + 2: idx["$Elements"] + 2 + n_elem]
        if len(raw) != n_elem:
            raise MeshParseError(f"{path}: truncated $Elements section")
        elements, boundary = [], []
        for ln, row in enumerate(raw, start=idx["$Elements"] + 3):
            parts = [int(v) for v in row.split()]
            etype, ntags = parts[1], parts[2]
            conn = parts[3 + ntags:]
            tag = parts[3] if ntags else 0
            if etype not in _GMSH_TYPES:
                raise MeshParseError(f"{path}:{ln}: unsupported element type {etype}")
            shape, order = _GMSH_TYPES[etype]
            conn = np.array([remap[g] for g in conn])
            if shape == "line":
                perm = _gmsh_line_permutation(order)
                ordered = np.empty_like(conn)
                ordered[perm] = conn  # perm[gmsh slot] = internal slot
                boundary.append(BoundaryEdge(ordered, tag))
            else:
                perm = gmsh_to_internal_permutation(shape, order)
                internal = np.empty_like(conn)
                internal[perm] = conn
                elements.append(Element(shape, order, internal))
        return HighOrderMesh(nodes, elements, boundary)
    except MeshParseError:
        raise
    except (ValueError, IndexError, KeyError) as err:
        raise MeshParseError(f"{path}: malformed Gmsh file: {err}")
