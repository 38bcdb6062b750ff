"""Parametric geometry patches and the queries used for mesh curving.

Patches are analytic primitives (line, circular arc, plane, cylinder and
sphere sections) or tensor-product Bezier patches.  Each supports evaluation
with first and second parametric derivatives, Gauss-Newton projection of a
spatial point, a chord-tolerance auxiliary triangulation used to seed
projections, and membership in an inflated-bounding-box k-d tree index.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "ParametricPatch",
    "LinePatch",
    "ArcPatch",
    "PlanePatch",
    "CylinderPatch",
    "SpherePatch",
    "BezierPatch",
    "AuxTriangulation",
    "PatchIndex",
    "ProjectionError",
    "DegenerateGeometryError",
    "GeometryParseError",
    "DomainError",
    "project",
    "auxiliary_triangulation",
    "build_patch_index",
    "load_geometry",
    "save_geometry",
]

GEOMETRY_FORMAT = "curvesvv-geometry-1"


class DomainError(ValueError):
    """Parameter lies outside the patch parameter domain."""


class ProjectionError(RuntimeError):
    """Point projection failed to converge."""


class DegenerateGeometryError(ValueError):
    """Patch has no spatial extent."""


class GeometryParseError(ValueError):
    """Geometry file is malformed."""


class ParametricPatch:
    """Base class: x(s) for curves (dim 1) or x(s1, s2) for surfaces (dim 2)."""

    kind = None

    def __init__(self, patch_id, domain):
        self.id = int(patch_id)
        self.domain = np.atleast_2d(np.asarray(domain, dtype=float))
        if self.domain.shape != (self.dim, 2):
            raise ValueError(f"domain must be ({self.dim}, 2), got {self.domain.shape}")
        if np.any(self.domain[:, 1] <= self.domain[:, 0]):
            raise ValueError("domain bounds must be increasing")

    dim = None

    def _check(self, params, tol=1e-12):
        params = np.atleast_1d(np.asarray(params, dtype=float))
        if params.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {params.shape}")
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        if np.any(params < lo - tol) or np.any(params > hi + tol):
            raise DomainError(
                f"patch {self.id}: parameters {params} outside domain {self.domain.tolist()}"
            )
        return params

    def point(self, params):
        raise NotImplementedError

    def jacobian(self, params):
        """First parametric derivatives, shape (3, dim)."""
        raise NotImplementedError

    def second(self, params):
        """Second parametric derivatives, shape (3, dim, dim)."""
        raise NotImplementedError

    def eval(self, params, derivs=0):
        """Point on the patch, optionally with first/second derivatives."""
        params = self._check(params)
        if derivs == 0:
            return self.point(params)
        if derivs == 1:
            return self.point(params), self.jacobian(params)
        return self.point(params), self.jacobian(params), self.second(params)

    def clip(self, params):
        return np.clip(params, self.domain[:, 0], self.domain[:, 1])

    def domain_center(self):
        return self.domain.mean(axis=1)

    def parameters(self):
        """Kind-specific constructor parameters, for serialization."""
        raise NotImplementedError


class LinePatch(ParametricPatch):
    kind = "line"
    dim = 1

    def __init__(self, patch_id, start, end, domain=((0.0, 1.0),)):
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        super().__init__(patch_id, domain)

    def point(self, params):
        return self.start + params[0] * (self.end - self.start)

    def jacobian(self, params):
        return (self.end - self.start).reshape(3, 1)

    def second(self, params):
        return np.zeros((3, 1, 1))

    def parameters(self):
        return {"start": self.start.tolist(), "end": self.end.tolist()}


class ArcPatch(ParametricPatch):
    """Circular arc x(s) = center + r (cos s * u + sin s * v)."""

    kind = "arc"
    dim = 1

    def __init__(self, patch_id, center, radius, u=(1, 0, 0), v=(0, 1, 0),
                 domain=((0.0, 2.0 * np.pi),)):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        super().__init__(patch_id, domain)

    def point(self, params):
        s = params[0]
        return self.center + self.radius * (math.cos(s) * self.u + math.sin(s) * self.v)

    def jacobian(self, params):
        s = params[0]
        d = self.radius * (-math.sin(s) * self.u + math.cos(s) * self.v)
        return d.reshape(3, 1)

    def second(self, params):
        s = params[0]
        d2 = -self.radius * (math.cos(s) * self.u + math.sin(s) * self.v)
        return d2.reshape(3, 1, 1)

    def parameters(self):
        return {
            "center": self.center.tolist(),
            "radius": self.radius,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
        }


class PlanePatch(ParametricPatch):
    kind = "plane"
    dim = 2

    def __init__(self, patch_id, origin, u, v, domain=((0.0, 1.0), (0.0, 1.0))):
        self.origin = np.asarray(origin, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        super().__init__(patch_id, domain)

    def point(self, params):
        return self.origin + params[0] * self.u + params[1] * self.v

    def jacobian(self, params):
        return np.column_stack((self.u, self.v))

    def second(self, params):
        return np.zeros((3, 2, 2))

    def parameters(self):
        return {"origin": self.origin.tolist(), "u": self.u.tolist(), "v": self.v.tolist()}


class CylinderPatch(ParametricPatch):
    """x(s1, s2) = origin + r (cos s1 * u + sin s1 * v) + s2 * axis."""

    kind = "cylinder"
    dim = 2

    def __init__(self, patch_id, origin, axis, radius, u, v, domain):
        self.origin = np.asarray(origin, dtype=float)
        self.axis = np.asarray(axis, dtype=float)
        self.radius = float(radius)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        super().__init__(patch_id, domain)

    def point(self, params):
        s1, s2 = params
        return (
            self.origin
            + self.radius * (math.cos(s1) * self.u + math.sin(s1) * self.v)
            + s2 * self.axis
        )

    def jacobian(self, params):
        s1, _ = params
        d1 = self.radius * (-math.sin(s1) * self.u + math.cos(s1) * self.v)
        return np.column_stack((d1, self.axis))

    def second(self, params):
        s1, _ = params
        out = np.zeros((3, 2, 2))
        out[:, 0, 0] = -self.radius * (math.cos(s1) * self.u + math.sin(s1) * self.v)
        return out

    def parameters(self):
        return {
            "origin": self.origin.tolist(),
            "axis": self.axis.tolist(),
            "radius": self.radius,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
        }


class SpherePatch(ParametricPatch):
    """x = center + r (cos s2 (cos s1 * u + sin s1 * v) + sin s2 * w)."""

    kind = "sphere"
    dim = 2

    def __init__(self, patch_id, center, radius, u, v, w, domain):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.u = np.asarray(u, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.w = np.asarray(w, dtype=float)
        super().__init__(patch_id, domain)

    def _ring(self, s1):
        return math.cos(s1) * self.u + math.sin(s1) * self.v

    def point(self, params):
        s1, s2 = params
        return self.center + self.radius * (math.cos(s2) * self._ring(s1) + math.sin(s2) * self.w)

    def jacobian(self, params):
        s1, s2 = params
        dring = -math.sin(s1) * self.u + math.cos(s1) * self.v
        d1 = self.radius * math.cos(s2) * dring
        d2 = self.radius * (-math.sin(s2) * self._ring(s1) + math.cos(s2) * self.w)
        return np.column_stack((d1, d2))

    def second(self, params):
        s1, s2 = params
        ring = self._ring(s1)
        dring = -math.sin(s1) * self.u + math.cos(s1) * self.v
        out = np.zeros((3, 2, 2))
        out[:, 0, 0] = -self.radius * math.cos(s2) * ring
        out[:, 0, 1] = out[:, 1, 0] = -self.radius * math.sin(s2) * dring
        out[:, 1, 1] = -self.radius * (math.cos(s2) * ring + math.sin(s2) * self.w)
        return out

    def parameters(self):
        return {
            "center": self.center.tolist(),
            "radius": self.radius,
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "w": self.w.tolist(),
        }


def _bernstein_all(n, t):
    """Values and first/second derivatives of all Bernstein basis B_{i,n}(t)."""
    vals = np.array([math.comb(n, i) * t**i * (1 - t) ** (n - i) for i in range(n + 1)])

    def lower(k):
        if n - k < 0:
            return np.zeros(1)
        return np.array(
            [math.comb(n - k, i) * t**i * (1 - t) ** (n - k - i) for i in range(n - k + 1)]
        )

    b1 = lower(1)
    d1 = np.zeros(n + 1)
    for i in range(n + 1):
        lo = b1[i - 1] if 0 <= i - 1 < b1.size else 0.0
        hi = b1[i] if i < b1.size else 0.0
        d1[i] = n * (lo - hi)
    b2 = lower(2)
    d2 = np.zeros(n + 1)
    if n >= 2:
        for i in range(n + 1):
            t0 = b2[i - 2] if 0 <= i - 2 < b2.size else 0.0
            t1 = b2[i - 1] if 0 <= i - 1 < b2.size else 0.0
            t2 = b2[i] if i < b2.size else 0.0
            d2[i] = n * (n - 1) * (t0 - 2 * t1 + t2)
    return vals, d1, d2


class BezierPatch(ParametricPatch):
    """Tensor-product Bezier patch on [0, 1]^dim from control coefficients."""

    kind = "bezier"

    def __init__(self, patch_id, control):
        self.control = np.asarray(control, dtype=float)
        if self.control.ndim == 2:
            self.dim = 1
            domain = ((0.0, 1.0),)
        elif self.control.ndim == 3:
            self.dim = 2
            domain = ((0.0, 1.0), (0.0, 1.0))
        else:
            raise ValueError("control must be (n, 3) for curves or (n, m, 3) for surfaces")
        super().__init__(patch_id, domain)

    def _basis(self, params):
        out = []
        shape = self.control.shape[: self.dim]
        for d in range(self.dim):
            out.append(_bernstein_all(shape[d] - 1, params[d]))
        return out

    def point(self, params):
        b = self._basis(params)
        if self.dim == 1:
            return np.einsum("i,ix->x", b[0][0], self.control)
        return np.einsum("i,j,ijx->x", b[0][0], b[1][0], self.control)

    def jacobian(self, params):
        b = self._basis(params)
        if self.dim == 1:
            return np.einsum("i,ix->x", b[0][1], self.control).reshape(3, 1)
        d1 = np.einsum("i,j,ijx->x", b[0][1], b[1][0], self.control)
        d2 = np.einsum("i,j,ijx->x", b[0][0], b[1][1], self.control)
        return np.column_stack((d1, d2))

    def second(self, params):
        b = self._basis(params)
        if self.dim == 1:
            return np.einsum("i,ix->x", b[0][2], self.control).reshape(3, 1, 1)
        out = np.zeros((3, 2, 2))
        out[:, 0, 0] = np.einsum("i,j,ijx->x", b[0][2], b[1][0], self.control)
        out[:, 1, 1] = np.einsum("i,j,ijx->x", b[0][0], b[1][2], self.control)
        mixed = np.einsum("i,j,ijx->x", b[0][1], b[1][1], self.control)
        out[:, 0, 1] = out[:, 1, 0] = mixed
        return out

    def parameters(self):
        return {"control": self.control.tolist()}


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project(patch, point, initial_guess=None, tol=1e-10, max_iter=100):
    """Project a spatial point onto a patch by clamped Gauss-Newton.

    Returns (params, distance) at a local minimizer of the distance.  The
    iteration stops when the projected gradient of the squared distance drops
    below `tol` (bound-constrained stationarity); ProjectionError is raised
    after `max_iter` iterations without convergence.
    """
    point = np.asarray(point, dtype=float)
    if initial_guess is None:
        initial_guess = patch.domain_center()
    s = patch.clip(np.atleast_1d(np.asarray(initial_guess, dtype=float)))
    lo, hi = patch.domain[:, 0], patch.domain[:, 1]

    def fval(p):
        r = patch.point(p) - point
        return float(r @ r)

    f = fval(s)
    for _ in range(max_iter):
        r = patch.point(s) - point
        jac = patch.jacobian(s)
        grad = 2.0 * jac.T @ r  # gradient of squared distance
        gp = grad.copy()
        at_lo = np.isclose(s, lo, atol=1e-14) & (grad > 0)
        at_hi = np.isclose(s, hi, atol=1e-14) & (grad < 0)
        gp[at_lo | at_hi] = 0.0
        if np.linalg.norm(gp) <= tol:
            return s.copy(), math.sqrt(f)
        h = jac.T @ jac
        # full Newton matrix when positive definite; the Gauss-Newton model
        # alone converges only linearly for interior points near the
        # curvature center (rate r / (R - r) for a cylinder)
        h_full = h + np.einsum("x,xij->ij", r, patch.second(s))
        if np.all(np.linalg.eigvalsh(h_full) > 1e-12 * max(1.0, np.linalg.norm(h))):
            h = h_full
        try:
            step = np.linalg.solve(2.0 * h + 1e-14 * np.eye(patch.dim), -grad)
        except np.linalg.LinAlgError:
            step = -grad
        alpha, improved = 1.0, False
        for _ in range(50):
            cand = patch.clip(s + alpha * step)
            fc = fval(cand)
            if np.any(cand != s) and fc <= f + 1e-4 * grad @ (cand - s):
                s, f, improved = cand, fc, True
                break
            alpha *= 0.5
        if not improved:
            # steepest-descent fallback for an indefinite Gauss-Newton model
            alpha = 1.0 / max(1.0, np.linalg.norm(grad))
            for _ in range(60):
                cand = patch.clip(s - alpha * grad)
                fc = fval(cand)
                if np.any(cand != s) and fc < f:
                    s, f, improved = cand, fc, True
                    break
                alpha *= 0.5
        if not improved:
            # no descent direction yields a representable decrease: the point
            # is stationary to machine precision
            return s.copy(), math.sqrt(f)
    raise ProjectionError(f"projection onto patch {patch.id} did not converge")


# ---------------------------------------------------------------------------
# auxiliary triangulation
# ---------------------------------------------------------------------------

@dataclass
class AuxTriangulation:
    """Chordal linearization of a patch with per-vertex parameters.

    `simplices` holds index pairs for curves and index triples for surfaces.
    """

    vertices: np.ndarray
    params: np.ndarray
    simplices: np.ndarray
    chord_tol: float
    _tree: object = field(default=None, repr=False)

    def nearest_vertex(self, point):
        """Index of the vertex closest to a spatial point."""
        if self._tree is None:
            self._tree = cKDTree(self.vertices)
        return int(self._tree.query(np.asarray(point, dtype=float))[1])


def _curvature_counts(patch, chord_tol, probes=12):
    """Per-direction subdivision counts from the sagitta bound."""
    lo, hi = patch.domain[:, 0], patch.domain[:, 1]
    grids = [np.linspace(lo[d], hi[d], probes) for d in range(patch.dim)]
    mesh = np.meshgrid(*grids, indexing="ij")
    samples = np.stack([m.ravel() for m in mesh], axis=1)
    m2 = np.zeros(patch.dim)
    for p in samples:
        d2 = patch.second(p)
        for d in range(patch.dim):
            m2[d] = max(m2[d], np.linalg.norm(d2[:, d, d]))
    counts = []
    for d in range(patch.dim):
        extent = hi[d] - lo[d]
        n = max(1, math.ceil(extent * math.sqrt(m2[d] / (8.0 * chord_tol))))
        counts.append(n)
    return counts


def _chord_error(patch, params_a, params_b):
    mid = 0.5 * (params_a + params_b)
    lin = 0.5 * (patch.point(params_a) + patch.point(params_b))
    return float(np.linalg.norm(patch.point(mid) - lin))


def auxiliary_triangulation(patch, chord_tol):
    """Linearize a patch to segments/triangles within a chord tolerance."""
    if chord_tol <= 0:
        raise ValueError(f"chord tolerance must be positive, got {chord_tol}")
    # degenerate patches have no spatial extent to triangulate
    probe = np.linspace(0, 1, 7)
    lo, hi = patch.domain[:, 0], patch.domain[:, 1]
    if patch.dim == 1:
        pts = np.array([patch.point(np.array([lo[0] + t * (hi[0] - lo[0])])) for t in probe])
    else:
        pts = np.array(
            [
                patch.point(np.array([lo[0] + a * (hi[0] - lo[0]), lo[1] + b * (hi[1] - lo[1])]))
                for a in probe
                for b in probe
            ]
        )
    if np.max(pts.max(axis=0) - pts.min(axis=0)) < 1e-14:
        raise DegenerateGeometryError(f"patch {patch.id} has zero extent")

    counts = _curvature_counts(patch, chord_tol)
    for _ in range(10):
        tri = _build_aux(patch, counts, chord_tol)
        if _max_midpoint_error(patch, tri) <= chord_tol:
            return tri
        counts = [math.ceil(c * 1.3) + 1 for c in counts]
    return tri


def _build_aux(patch, counts, chord_tol):
    lo, hi = patch.domain[:, 0], patch.domain[:, 1]
    if patch.dim == 1:
        n = counts[0]
        svals = np.linspace(lo[0], hi[0], n + 1)
        params = svals.reshape(-1, 1)
        vertices = np.array([patch.point(p) for p in params])
        simplices = np.array([[i, i + 1] for i in range(n)])
        return AuxTriangulation(vertices, params, simplices, chord_tol)
    n1, n2 = counts
    s1 = np.linspace(lo[0], hi[0], n1 + 1)
    s2 = np.linspace(lo[1], hi[1], n2 + 1)
    params = np.array([[a, b] for b in s2 for a in s1])
    vertices = np.array([patch.point(p) for p in params])
    tris = []
    for j in range(n2):
        for i in range(n1):
            v00 = j * (n1 + 1) + i
            v10 = v00 + 1
            v01 = v00 + (n1 + 1)
            v11 = v01 + 1
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    return AuxTriangulation(vertices, params, np.array(tris), chord_tol)


def _max_midpoint_error(patch, tri):
    err = 0.0
    for simplex in tri.simplices:
        ps = tri.params[simplex]
        for a in range(len(simplex)):
            for b in range(a + 1, len(simplex)):
                err = max(err, _chord_error(patch, ps[a], ps[b]))
        if len(simplex) == 3:
            centroid = ps.mean(axis=0)
            lin = tri.vertices[simplex].mean(axis=0)
            err = max(err, float(np.linalg.norm(patch.point(centroid) - lin)))
    return err


def default_chord_tol(patch):
    """Default auxiliary-triangulation tolerance: 1e-3 of the patch diagonal."""
    box = _patch_bbox(patch)
    diag = float(np.linalg.norm(box[1] - box[0]))
    return max(1e-3 * diag, 1e-12)


# ---------------------------------------------------------------------------
# spatial index
# ---------------------------------------------------------------------------

def _patch_bbox(patch, samples=33):
    lo, hi = patch.domain[:, 0], patch.domain[:, 1]
    grids = [np.linspace(lo[d], hi[d], samples) for d in range(patch.dim)]
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.array(
        [patch.point(np.array(p)) for p in zip(*[m.ravel() for m in mesh])]
    )
    return pts.min(axis=0), pts.max(axis=0)


def _inflated_box(patch, fraction=0.05):
    lo, hi = _patch_bbox(patch)
    ext = hi - lo
    big = ext.max()
    pad = np.where(ext > 1e-14, fraction * ext, fraction * max(big, 1e-12))
    return lo - pad, hi + pad


class _KdNode:
    __slots__ = ("lo", "hi", "left", "right", "items")

    def __init__(self, lo, hi, left=None, right=None, items=None):
        self.lo, self.hi, self.left, self.right, self.items = lo, hi, left, right, items


class PatchIndex:
    """k-d tree over inflated patch bounding boxes, queried by containment."""

    def __init__(self, patches, inflate=0.05, leaf_size=4):
        if not patches:
            raise ValueError("patch list must be nonempty")
        self.patches = sorted(patches, key=lambda p: p.id)
        self.boxes = [_inflated_box(p, inflate) for p in self.patches]
        self._root = self._build(list(range(len(self.patches))), 0, leaf_size)

    def _build(self, items, depth, leaf_size):
        lo = np.min([self.boxes[i][0] for i in items], axis=0)
        hi = np.max([self.boxes[i][1] for i in items], axis=0)
        if len(items) <= leaf_size:
            return _KdNode(lo, hi, items=items)
        axis = depth % 3
        items = sorted(
            items, key=lambda i: 0.5 * (self.boxes[i][0][axis] + self.boxes[i][1][axis])
        )
        half = len(items) // 2
        return _KdNode(
            lo,
            hi,
            left=self._build(items[:half], depth + 1, leaf_size),
            right=self._build(items[half:], depth + 1, leaf_size),
        )

    def query(self, point):
        """Patches whose inflated bounding box contains the point."""
        point = np.asarray(point, dtype=float)
        hits = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            if np.any(point < node.lo) or np.any(point > node.hi):
                continue
            if node.items is not None:
                for i in node.items:
                    blo, bhi = self.boxes[i]
                    if np.all(point >= blo) and np.all(point <= bhi):
                        hits.append(self.patches[i])
            else:
                stack.append(node.left)
                stack.append(node.right)
        return sorted(hits, key=lambda p: p.id)


def build_patch_index(patches, inflate=0.05):
    return PatchIndex(patches, inflate=inflate)


# ---------------------------------------------------------------------------
# geometry files
# ---------------------------------------------------------------------------

_PATCH_KINDS = {}
for _cls in (LinePatch, ArcPatch, PlanePatch, CylinderPatch, SpherePatch, BezierPatch):
    _PATCH_KINDS[_cls.kind] = _cls


def _patch_from_record(rec):
    try:
        kind = rec["kind"]
        cls = _PATCH_KINDS[kind]
        pid = rec["id"]
        params = dict(rec["parameters"])
        if kind == "bezier":
            return cls(pid, **params)
        if "domain" in rec:
            params["domain"] = rec["domain"]
        return cls(pid, **params)
    except KeyError as err:
        raise GeometryParseError(f"patch record missing field {err}")
    except (TypeError, ValueError) as err:
        raise GeometryParseError(f"bad patch record ({err})")


def load_geometry(path):
    """Load a patch set from a geometry JSON file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise GeometryParseError(f"{path}: invalid JSON at line {err.lineno}: {err.msg}")
    if not isinstance(doc, dict) or doc.get("format") != GEOMETRY_FORMAT:
        raise GeometryParseError(f"{path}: missing or unsupported format tag")
    if "patches" not in doc or not isinstance(doc["patches"], list):
        raise GeometryParseError(f"{path}: missing patches array")
    patches = [_patch_from_record(rec) for rec in doc["patches"]]
    ids = [p.id for p in patches]
    if len(set(ids)) != len(ids):
        raise GeometryParseError(f"{path}: duplicate patch ids")
    return patches


def save_geometry(patches, path):
    doc = {
        "format": GEOMETRY_FORMAT,
        "patches": [
            {
                "id": p.id,
                "kind": p.kind,
                "parameters": p.parameters(),
                "domain": p.domain.tolist(),
            }
            for p in patches
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
