"""Variational mesh curving: energy functionals, analytic gradients and
Hessians, node-wise relaxation and the Gauss-Seidel untangling loop.

The deformation is measured element by element through the composite
gradient F = grad(phi_M) grad(phi_I)^-1, with the ideal (straight) geometry
frozen at the start of the optimization.  In two dimensions every supported
energy density is a function of A = tr(F^T F) and J = det F, which keeps the
chain rule closed form:

  linear-elasticity  W = mu/4 (A^2 - 2 J^2 - 2 A + 2) + lambda/8 (A - 2)^2
  hyperelastic       W = mu/2 (A - 2) - mu ln Jr + lambda/2 (ln Jr)^2
  winslow            W = A / Jr
  distortion         W = A / (2 Jr)

where Jr = (J + sqrt(J^2 + 4 delta^2)) / 2 regularizes the Jacobian so the
energies stay finite and differentiable on inverted configurations.
"""

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import mesh as hm
from . import polybasis as pb

__all__ = [
    "FUNCTIONAL_KINDS",
    "EnergyFunctional",
    "ConvergenceReport",
    "element_energy",
    "mesh_energy",
    "energy_gradient",
    "relax_node",
    "optimize",
]

FUNCTIONAL_KINDS = ("linear-elasticity", "hyperelastic", "winslow", "distortion")

_DELTA_FLOOR = 1e-8


@dataclass(frozen=True)
class EnergyFunctional:
    """Energy density choice with material and regularization parameters.

    delta=None lets optimize() pick 1e-2 times the smallest initial Jacobian
    over valid elements (floored at 1e-8); standalone energy calls fall back
    to the floor value.
    """

    kind: str
    mu: float = 1.0
    lam: float = 1.0
    delta: float = None

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(
                f"unknown functional kind {self.kind!r}, expected one of {FUNCTIONAL_KINDS}"
            )

    def resolved_delta(self):
        return _DELTA_FLOOR if self.delta is None else float(self.delta)


def _regularized_jacobian(j, delta):
    root = np.sqrt(j * j + 4.0 * delta * delta)
    jr = 0.5 * (j + root)
    d1 = 0.5 * (1.0 + j / root)
    d2 = 2.0 * delta * delta / root**3
    return jr, d1, d2


def _density_terms(func, a, j, delta):
    """W and its first/second partials in (A, J), vectorized."""
    mu, lam = func.mu, func.lam
    zeros = np.zeros_like(a)
    if func.kind == "linear-elasticity":
        w = mu / 4.0 * (a * a - 2.0 * j * j - 2.0 * a + 2.0) + lam / 8.0 * (a - 2.0) ** 2
        fa = mu * (a - 1.0) / 2.0 + lam * (a - 2.0) / 4.0
        fj = -mu * j
        faa = np.full_like(a, mu / 2.0 + lam / 4.0)
        faj = zeros
        fjj = np.full_like(a, -mu)
        return w, fa, fj, faa, faj, fjj
    jr, d1, d2 = _regularized_jacobian(j, delta)
    if func.kind == "hyperelastic":
        ln = np.log(jr)
        w = mu / 2.0 * (a - 2.0) - mu * ln + lam / 2.0 * ln * ln
        ga = np.full_like(a, mu / 2.0)
        gr = (lam * ln - mu) / jr
        grr = (lam - lam * ln + mu) / (jr * jr)
        return w, ga, gr * d1, zeros, zeros, grr * d1 * d1 + gr * d2
    scale = 1.0 if func.kind == "winslow" else 0.5
    w = scale * a / jr
    fa = scale / jr
    gr = -scale * a / (jr * jr)
    grr = 2.0 * scale * a / jr**3
    far = -scale / (jr * jr)
    return w, fa, gr * d1, zeros, far * d1, grr * d1 * d1 + gr * d2


@lru_cache(maxsize=None)
def _element_quadrature(shape, order, q):
    """Reference quadrature (points, weights) and shape gradients there."""
    rule = pb.gll_rule(q)
    t = 0.5 * (rule.points + 1.0)
    wt = 0.5 * rule.weights
    aa, bb = np.meshgrid(t, t, indexing="ij")
    wa, wb = np.meshgrid(wt, wt, indexing="ij")
    a, b = aa.ravel(), bb.ravel()
    w = (wa * wb).ravel()
    if shape == "triangle":
        pts = np.column_stack((a * (1.0 - b), b))  # collapsed-square map
        w = w * (1.0 - b)
    else:
        pts = np.column_stack((a, b))
    grads = hm.shape_gradients(shape, order, pts)
    return pts, w, grads


def _ideal_data(msh, elem):
    gi = hm.ideal_gradient(msh, elem)
    det = float(np.linalg.det(gi))
    return np.linalg.inv(gi), det


def _deformation(msh, elem, inv_gi, q):
    _, w, grads = _element_quadrature(elem.shape, elem.order, q)
    coords = msh.nodes[elem.nodes][:, :2]
    gm = np.einsum("ni,qnd->qid", coords, grads)
    f = gm @ inv_gi
    a = np.einsum("qij,qij->q", f, f)
    j = f[:, 0, 0] * f[:, 1, 1] - f[:, 0, 1] * f[:, 1, 0]
    return f, a, j, w, grads


def _cofactor(f):
    cof = np.empty_like(f)
    cof[:, 0, 0] = f[:, 1, 1]
    cof[:, 0, 1] = -f[:, 1, 0]
    cof[:, 1, 0] = -f[:, 0, 1]
    cof[:, 1, 1] = f[:, 0, 0]
    return cof


def element_energy(msh, elem, func, rule=None, ideal=None, delta=None):
    """Quadrature approximation of the element's deformation energy."""
    q = rule.count if rule is not None else elem.order + 2
    inv_gi, det_i = ideal if ideal is not None else _ideal_data(msh, elem)
    if delta is None:
        delta = func.resolved_delta()
    _, a, j, w, _ = _deformation(msh, elem, inv_gi, q)
    wdens = _density_terms(func, a, j, delta)[0]
    return float(np.dot(w, wdens) * det_i)


def mesh_energy(msh, func, rule=None, ideals=None, delta=None):
    total = 0.0
    for e, elem in enumerate(msh.elements):
        ideal = ideals[e] if ideals is not None else None
        total += element_energy(msh, elem, func, rule=rule, ideal=ideal, delta=delta)
    return total


def _star_energy(msh, func, star, ideals, q, delta):
    total = 0.0
    for e in star:
        elem = msh.elements[e]
        inv_gi, det_i = ideals[e]
        _, a, j, w, _ = _deformation(msh, elem, inv_gi, q)
        total += float(np.dot(w, _density_terms(func, a, j, delta)[0]) * det_i)
    return total


def _star_terms(msh, func, node, star, ideals, q, delta):
    """Energy, gradient and Hessian of the star energy wrt one node."""
    energy = 0.0
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for e in star:
        elem = msh.elements[e]
        inv_gi, det_i = ideals[e]
        f, a, j, w, grads = _deformation(msh, elem, inv_gi, q)
        wdens, fa, fj, faa, faj, fjj = _density_terms(func, a, j, delta)
        energy += float(np.dot(w, wdens) * det_i)
        local = int(np.nonzero(elem.nodes == node)[0][0])
        g = grads[:, local, :] @ inv_gi  # (q, 2): inv_gi^T grad(l_n)
        cof = _cofactor(f)
        dwdf = 2.0 * fa[:, None, None] * f + fj[:, None, None] * cof
        wq = w * det_i
        grad += np.einsum("q,qak,qk->a", wq, dwdf, g)
        fg = np.einsum("qak,qk->qa", f, g)
        cg = np.einsum("qak,qk->qa", cof, g)
        gg = np.einsum("qk,qk->q", g, g)
        hess += np.einsum("q,q->", wq, 2.0 * fa * gg) * np.eye(2)
        hess += 4.0 * np.einsum("q,qa,qb->ab", wq * faa, fg, fg)
        mixed = np.einsum("q,qa,qb->ab", wq * faj, fg, cg)
        hess += 2.0 * (mixed + mixed.T)
        hess += np.einsum("q,qa,qb->ab", wq * fjj, cg, cg)
    return energy, grad, hess


def energy_gradient(msh, func, node, ideals=None, node_elems=None, q=None, delta=None):
    """Analytic gradient of the incident-element energy wrt a node position."""
    if node_elems is None:
        node_elems = msh.node_to_elements()
    star = node_elems.get(int(node), [])
    if ideals is None:
        ideals = {e: _ideal_data(msh, msh.elements[e]) for e in star}
    if delta is None:
        delta = func.resolved_delta()
    if not star:
        return np.zeros(2)
    if q is None:
        q = max(msh.elements[e].order for e in star) + 2
    _, grad, _ = _star_terms(msh, func, node, star, ideals, q, delta)
    return grad


def _is_pd(h):
    return h[0, 0] > 0.0 and h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0] > 0.0


def relax_node(msh, func, node, ideals=None, node_elems=None, q=None, delta=None):
    """One Newton/backtracking update of a free node; returns the displacement.

    Uses the analytic local Hessian when positive definite, steepest descent
    otherwise; an Armijo backtracking search guarantees the local energy never
    increases (the displacement is zero when no decrease is found).
    """
    if node_elems is None:
        node_elems = msh.node_to_elements()
    star = node_elems.get(int(node), [])
    if not star:
        return np.zeros(2)
    if ideals is None:
        ideals = {e: _ideal_data(msh, msh.elements[e]) for e in star}
    if delta is None:
        delta = func.resolved_delta()
    if q is None:
        q = max(msh.elements[e].order for e in star) + 2
    e0, grad, hess = _star_terms(msh, func, node, star, ideals, q, delta)
    gnorm = float(np.linalg.norm(grad))
    if gnorm <= 1e-14 * max(1.0, abs(e0)):
        return np.zeros(2)
    if _is_pd(hess):
        step = np.linalg.solve(hess, -grad)
    else:
        step = -grad / max(float(np.linalg.norm(hess)), 1e-12)
    x0 = msh.nodes[node][:2].copy()
    alpha = 1.0
    for _ in range(40):
        trial = x0 + alpha * step
        msh.nodes[node][:2] = trial
        e_trial = _star_energy(msh, func, star, ideals, q, delta)
        if e_trial <= e0 + 1e-4 * alpha * float(grad @ step):
            return alpha * step
        alpha *= 0.5
    msh.nodes[node][:2] = x0
    return np.zeros(2)


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)  # (sweep, energy, residual, invalid)
    converged: bool = False

    @property
    def energies(self):
        return [r[1] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sweep", "energy", "residual", "invalid_count"])
            for row in self.rows:
                writer.writerow(row)


def optimize(msh, func, eps=1e-6, max_sweeps=200, free_nodes=None, q=None,
             free_excluded=False):
    """Gauss-Seidel node relaxation until the scaled update norm drops below eps.

    Free nodes default to everything off the boundary; boundary nodes on
    excluded entities stay fixed unless free_excluded is set.  The ideal
    (straight) element geometry is frozen at entry.  Returns (curved mesh,
    ConvergenceReport); convergence means max node movement per sweep,
    divided by the mesh bounding-box diagonal, fell below eps.
    """
    out = msh.copy()
    if free_nodes is None:
        fixed = out.boundary_node_ids()
        if free_excluded:
            fixed -= set(out.excluded)
        free_nodes = sorted(set(range(len(out.nodes))) - fixed)
    else:
        free_nodes = sorted(int(n) for n in free_nodes)

    node_elems = out.node_to_elements()
    ideals = {e: _ideal_data(out, elem) for e, elem in enumerate(out.elements)}
    if q is None:
        q = max((elem.order for elem in out.elements), default=1) + 2

    delta = func.delta
    if delta is None:
        valid_mins = []
        for e, elem in enumerate(out.elements):
            _, _, j, _, _ = _deformation(out, elem, ideals[e][0], q)
            if j.min() > 0:
                valid_mins.append(j.min())
        delta = max(_DELTA_FLOOR, 1e-2 * min(valid_mins)) if valid_mins else _DELTA_FLOOR

    scale = max(out.bbox_diagonal(), 1e-300)
    report = ConvergenceReport()
    for sweep in range(1, max_sweeps + 1):
        max_disp = 0.0
        for node in free_nodes:
            disp = relax_node(
                out, func, node, ideals=ideals, node_elems=node_elems, q=q, delta=delta
            )
            max_disp = max(max_disp, float(np.linalg.norm(disp)))
        residual = max_disp / scale
        energy = mesh_energy(out, func, ideals=ideals, delta=delta)
        invalid = len(hm.invalid_elements(out))
        report.rows.append((sweep, energy, residual, invalid))
        if residual < eps:
            report.converged = True
            break
    return out, report
