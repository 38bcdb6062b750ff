"""Projection curving: recover patch parametrisations for an imported
linear surface mesh, snap its boundary nodes to the geometry under the
displacement/inversion exclusion rules, and place high-order boundary nodes.
"""

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import mesh as hm

__all__ = [
    "NodeAssociation",
    "UnassignedNodeError",
    "assign_parent_surfaces",
    "snap_nodes",
    "curve_boundary",
    "exclusion_report",
    "write_exclusion_report",
]

MAX_CANDIDATES = 8


class UnassignedNodeError(RuntimeError):
    """Some boundary nodes matched no candidate patch."""

    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"boundary nodes without a parent patch: {self.nodes}")


@dataclass
class NodeAssociation:
    node: int
    patch_id: int
    params: tuple
    distance: float
    position: np.ndarray  # projected point on the parent patch
    status: str = "pending"  # pending | snapped | excluded
    reason: str = None  # displacement | inversion
    displacement_ratio: float = 0.0


class _AuxCache:
    def __init__(self, patches):
        self.patches = {p.id: p for p in patches}
        self._aux = {}

    def aux(self, patch):
        if patch.id not in self._aux:
            self._aux[patch.id] = geo.auxiliary_triangulation(
                patch, geo.default_chord_tol(patch)
            )
        return self._aux[patch.id]


def _associate_one(node, point, candidates, cache):
    best = None
    for patch in candidates:
        aux = cache.aux(patch)
        seed = aux.params[aux.nearest_vertex(point)]
        try:
            params, dist = geo.project(patch, point, seed)
        except geo.ProjectionError:
            continue
        key = (dist, patch.id)
        if best is None or key < best[0]:
            assoc = NodeAssociation(
                node, patch.id, tuple(params), dist, patch.point(params)
            )
            best = (key, assoc)
    return best[1] if best else None


def assign_parent_surfaces(msh, index, patches=None, threads=None):
    """Associate every boundary node with its closest parent patch.

    Candidates come from the inflated-box index; each projection is seeded by
    the nearest vertex of the candidate's auxiliary triangulation.  Ties in
    distance go to the lowest patch id.  Raises UnassignedNodeError listing
    any node with an empty candidate set.
    """
    if patches is None:
        patches = index.patches
    cache = _AuxCache(patches)
    nodes = sorted(msh.boundary_node_ids())
    todo = []
    unassigned = []
    for node in nodes:
        point = msh.nodes[node]
        candidates = index.query(point)
        if not candidates:
            unassigned.append(node)
            continue
        if len(candidates) > MAX_CANDIDATES:
            warnings.warn(
                f"node {node}: {len(candidates)} candidate patches, keeping "
                f"the {MAX_CANDIDATES} closest boxes"
            )
            candidates = candidates[:MAX_CANDIDATES]
        todo.append((node, point, candidates))
    if unassigned:
        raise UnassignedNodeError(unassigned)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda t: _associate_one(*t, cache), todo)
            )
    else:
        results = [_associate_one(*t, cache) for t in todo]

    missing = [t[0] for t, r in zip(todo, results) if r is None]
    if missing:
        raise UnassignedNodeError(missing)
    return results


def snap_nodes(msh, associations, max_rel_disp=0.10):
    """Move boundary nodes onto their parent patches with exclusion rules.

    Rule (a): skip the move when the displacement exceeds `max_rel_disp`
    times the mean length of the element sides incident to the node.
    Rule (b): skip it when the move would invert an incident element.
    Excluded nodes keep their position and are recorded with the rule that
    fired.  Moves are applied serially in node-index order so rule (b) sees
    a consistent mesh.  Returns the updated mesh copy.
    """
    out = msh.copy()
    node_elems = out.node_to_elements()
    for assoc in sorted(associations, key=lambda a: a.node):
        node = assoc.node
        target = np.asarray(assoc.position, dtype=float)
        disp = float(np.linalg.norm(target - out.nodes[node]))
        lengths = out.edge_lengths_at(node)
        local = float(np.mean(lengths)) if lengths else 0.0
        assoc.displacement_ratio = disp / local if local > 0 else np.inf
        if local > 0 and disp > max_rel_disp * local:
            assoc.status, assoc.reason = "excluded", "displacement"
            out.excluded[node] = "displacement"
            continue
        old = out.nodes[node].copy()
        out.nodes[node] = target
        bad = False
        for e in node_elems.get(node, []):
            ok, _ = hm.validity(out, out.elements[e])
            if not ok:
                bad = True
                break
        if bad:
            out.nodes[node] = old
            assoc.status, assoc.reason = "excluded", "inversion"
            out.excluded[node] = "inversion"
            continue
        assoc.status = "snapped"
        out.node_patch[node] = (assoc.patch_id, tuple(assoc.params))
    return out


def exclusion_report(associations):
    """JSON-ready exclusion report: node id, reason, displacement ratio."""
    return [
        {
            "node": a.node,
            "reason": a.reason,
            "displacement_ratio": a.displacement_ratio,
        }
        for a in associations
        if a.status == "excluded"
    ]


def write_exclusion_report(associations, path):
    with open(path, "w") as fh:
        json.dump(exclusion_report(associations), fh, indent=1)


def curve_boundary(msh, target_order, patches, report=None):
    """Elevate a snapped linear mesh and curve its boundary edges.

    Boundary edges whose tag names a patch and whose endpoints are both
    snapped get their interior nodes projected onto that patch (seeded by
    interpolated endpoint parameters when available, else by the auxiliary
    triangulation).  Edges touching excluded nodes, farfield edges and all
    interior edges stay straight.  Projection failures demote the edge to
    straight and are listed in `report` (a list, if given).
    """
    if target_order == 1:
        return msh.copy()
    cache = _AuxCache(patches)
    by_id = {p.id: p for p in patches}
    out = hm.elevate_order(msh, target_order)
    for edge in out.boundary:
        tag = edge.tag
        if tag == "farfield" or tag not in by_id:
            continue
        a, b = int(edge.nodes[0]), int(edge.nodes[-1])
        if a in out.excluded or b in out.excluded:
            continue
        patch = by_id[tag]
        seeds = _edge_seeds(out, patch, a, b, edge.nodes.size - 2, cache)
        try:
            for node, seed in zip(edge.nodes[1:-1], seeds):
                params, _ = geo.project(patch, out.nodes[node], seed)
                out.nodes[node] = patch.point(params)
                out.node_patch[int(node)] = (patch.id, tuple(params))
        except geo.ProjectionError:
            _straighten_edge(out, edge)
            if report is not None:
                report.append(
                    {"edge": [a, b], "tag": tag, "reason": "projection-failed"}
                )
    return out


def _edge_seeds(msh, patch, a, b, count, cache):
    pa = msh.node_patch.get(a)
    pb = msh.node_patch.get(b)
    if pa and pb and pa[0] == patch.id and pb[0] == patch.id:
        sa, sb = np.asarray(pa[1]), np.asarray(pb[1])
        return [sa + (sb - sa) * k / (count + 1) for k in range(1, count + 1)]
    aux = cache.aux(patch)
    seeds = []
    xa, xb = msh.nodes[a], msh.nodes[b]
    for k in range(1, count + 1):
        chord = xa + (xb - xa) * k / (count + 1)
        seeds.append(aux.params[aux.nearest_vertex(chord)])
    return seeds


def _straighten_edge(msh, edge):
    xa, xb = msh.nodes[edge.nodes[0]], msh.nodes[edge.nodes[-1]]
    n = edge.nodes.size - 1
    for k, node in enumerate(edge.nodes[1:-1], start=1):
        msh.nodes[node] = xa + (xb - xa) * k / n
        msh.node_patch.pop(int(node), None)
