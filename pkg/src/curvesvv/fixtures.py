"""Bundled test geometries and meshes.

The quarter annulus (r in [1, 2], theta in [0, pi/2]) is the standard
untangling fixture: its inner ring holds three sliver triangles whose free
vertex sits between the inner boundary chord and the true arc, so imposing
the arc curvature inverts them and the variational optimizer has to recover.
The rounded plate is a nine-patch boundary used to exercise multi-patch
queries.
"""

import math

import numpy as np

from . import geometry as geo
from . import mesh as hm

__all__ = [
    "quarter_annulus_geometry",
    "quarter_annulus_mesh",
    "rounded_plate_geometry",
    "QUARTER_ANNULUS_NODE_COUNT",
    "QUARTER_ANNULUS_ELEMENT_COUNT",
]

QUARTER_ANNULUS_NODE_COUNT = 16
QUARTER_ANNULUS_ELEMENT_COUNT = 19

# radius of the sliver vertices: between the 30-degree inner chord
# (cos 15 deg ~ 0.9659) and the unit arc, so boundary curving sweeps past them
_SLIVER_RADIUS = 0.98


def quarter_annulus_geometry():
    """Patches bounding the quarter annulus: two arcs and two radial lines."""
    quarter = ((0.0, math.pi / 2),)
    return [
        geo.ArcPatch(0, (0, 0, 0), 1.0, domain=quarter),
        geo.ArcPatch(1, (0, 0, 0), 2.0, domain=quarter),
        geo.LinePatch(2, (1, 0, 0), (2, 0, 0)),
        geo.LinePatch(3, (0, 1, 0), (0, 2, 0)),
    ]


def _polar(r, deg):
    a = math.radians(deg)
    return (r * math.cos(a), r * math.sin(a), 0.0)


def quarter_annulus_mesh():
    """Linear quarter-annulus mesh with three inner sliver triangles."""
    ring_a = [_polar(1.0, d) for d in (0, 30, 60, 90)]            # inner arc
    ring_b = [_polar(_SLIVER_RADIUS, d) for d in (15, 45, 75)]    # sliver tips
    ring_c = [_polar(1.4, d) for d in (0, 30, 60, 90)]
    ring_d = [_polar(2.0, d) for d in (0, 22.5, 45, 67.5, 90)]    # outer arc
    nodes = np.array(ring_a + ring_b + ring_c + ring_d)
    a = [0, 1, 2, 3]
    b = [4, 5, 6]
    c = [7, 8, 9, 10]
    d = [11, 12, 13, 14, 15]

    tris = []
    for k in range(3):  # slivers on the inner boundary chords
        tris.append((a[k], b[k], a[k + 1]))
    for k in range(3):  # band between the zigzag chain and ring C
        tris.append((a[k], c[k], b[k]))
        tris.append((b[k], c[k], c[k + 1]))
        tris.append((b[k], c[k + 1], a[k + 1]))
    for k in range(4):  # band between ring C and the outer arc
        tris.append((c[k], d[k], d[k + 1]))
        if k < 3:
            tris.append((c[k], d[k + 1], c[k + 1]))

    elements = [hm.Element("triangle", 1, t) for t in tris]
    boundary = (
        [hm.BoundaryEdge([a[k], a[k + 1]], 0) for k in range(3)]
        + [hm.BoundaryEdge([d[k], d[k + 1]], 1) for k in range(4)]
        + [hm.BoundaryEdge([a[0], c[0]], 2), hm.BoundaryEdge([c[0], d[0]], 2)]
        + [hm.BoundaryEdge([a[3], c[3]], 3), hm.BoundaryEdge([c[3], d[4]], 3)]
    )
    msh = hm.HighOrderMesh(nodes, elements, boundary)
    bad = hm.invalid_elements(msh)
    if bad:
        raise AssertionError(f"fixture has invalid linear elements: {bad}")
    return msh


def rounded_plate_geometry():
    """Rectangle with rounded corners and a circular hole (nine patches)."""
    r = 0.5
    patches = [
        geo.LinePatch(0, (r, 0, 0), (4 - r, 0, 0)),
        geo.LinePatch(1, (4, r, 0), (4, 3 - r, 0)),
        geo.LinePatch(2, (4 - r, 3, 0), (r, 3, 0)),
        geo.LinePatch(3, (0, 3 - r, 0), (0, r, 0)),
        geo.ArcPatch(4, (4 - r, r, 0), r, domain=((-math.pi / 2, 0.0),)),
        geo.ArcPatch(5, (4 - r, 3 - r, 0), r, domain=((0.0, math.pi / 2),)),
        geo.ArcPatch(6, (r, 3 - r, 0), r, domain=((math.pi / 2, math.pi),)),
        geo.ArcPatch(7, (r, r, 0), r, domain=((math.pi, 3 * math.pi / 2),)),
        geo.ArcPatch(8, (2.0, 1.5, 0), 0.6),
    ]
    return patches
