"""Meshes, cracks, element classification, and PD node families.

The mesh side is deliberately small: structured Q4/H8 grids plus a plain-text
reader cover every geometry this engine targets.  The interesting machinery
is the adaptive split of the element set into standard / alpha-PD / beta-PD
classes around a growing crack, and the horizon-ball node families that feed
the nonlocal operators.

Conventions baked in here:

* element label values are 0 = standard, 1 = alpha-PD (edge touched by the
  crack), 2 = beta-PD (centroid within ``r_beta = m_beta * delta_min`` of an
  alpha centroid);
* an element's characteristic size ``delta_e`` is its shortest edge, and a
  node's size is the max over its incident elements (conservative: larger
  horizons, larger families);
* nodal volume is the element-count-weighted lump ``sum(V_e / N_e)`` over
  incident elements, matching the one-point quadrature used everywhere in
  the PD operators (2-D volumes include the thickness);
* bond/crack intersection counts touching and collinear overlap as crossing,
  so zero-measure bonds can never bridge the crack faces.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import CrackError, FamilyError, MeshError
from .fem import batch_element_gradients

STANDARD, ALPHA_PD, BETA_PD = 0, 1, 2

# Local edge/face connectivity. 2-D faces are the edges themselves; H8 faces
# are ordered so that (b-a) x (c-a) points outward for a right-handed element.
Q4_EDGES = np.array([(0, 1), (1, 2), (2, 3), (3, 0)])
H8_EDGES = np.array(
    [(0, 1), (1, 2), (2, 3), (3, 0),
     (4, 5), (5, 6), (6, 7), (7, 4),
     (0, 4), (1, 5), (2, 6), (3, 7)]
)
H8_FACES = np.array(
    [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
)

_MIN_NEIGHBORS = {2: 5, 3: 9}


# ---------------------------------------------------------------------------
# Mesh


@dataclass
class Mesh:
    """Validated Q4 or H8 mesh with derived geometry caches."""

    nodes: np.ndarray      # (nn, dim)
    elements: np.ndarray   # (ne, nen) int
    kind: str              # "Q4" | "H8"
    thickness: float = 1.0
    # Derived by build_mesh:
    delta_e: np.ndarray = field(default=None, repr=False)      # shortest edge per element
    delta_min: float = 0.0
    centroids: np.ndarray = field(default=None, repr=False)
    volumes: np.ndarray = field(default=None, repr=False)      # incl. thickness in 2-D
    node_volumes: np.ndarray = field(default=None, repr=False)  # lumped sum(V_e/N_e)
    node_delta: np.ndarray = field(default=None, repr=False)   # max delta_e over incident
    face_owners: dict = field(default=None, repr=False)        # face key -> [elem ids]
    _node_elem_offsets: np.ndarray = field(default=None, repr=False)
    _node_elem_flat: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def nen(self):
        return self.elements.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def local_edges(self):
        return Q4_EDGES if self.kind == "Q4" else H8_EDGES

    @property
    def local_faces(self):
        return Q4_EDGES if self.kind == "Q4" else H8_FACES

    def element_coords(self, e):
        return self.nodes[self.elements[e]]

    def elements_of_node(self, n):
        o = self._node_elem_offsets
        return self._node_elem_flat[o[n]:o[n + 1]]

    def face_key(self, e, f):
        return tuple(sorted(self.elements[e, self.local_faces[f]]))

    def face_geometry(self, e, f):
        """(ordered node ids, measure, outward unit normal, centroid) of a face.

        The measure is length*thickness in 2-D and area in 3-D, i.e. the
        surface weight that pairs with volume-weighted element sums.
        """
        ids = self.elements[e, self.local_faces[f]]
        pts = self.nodes[ids]
        if self.dim == 2:
            d = pts[1] - pts[0]
            length = np.hypot(d[0], d[1])
            normal = np.array([d[1], -d[0]]) / length
            return ids, length * self.thickness, normal, pts.mean(axis=0)
        # Planar quad: the vector area is half the cross product of its
        # diagonals (exact for planar faces, which is all we generate).
        va = 0.5 * np.cross(pts[2] - pts[0], pts[3] - pts[1])
        area = np.linalg.norm(va)
        return ids, area, va / area, pts.mean(axis=0)

    def boundary_faces(self):
        """Yield (elem, local face index) for every boundary face."""
        for key, owners in self.face_owners.items():
            if len(owners) == 1:
                e = owners[0]
                for f in range(len(self.local_faces)):
                    if self.face_key(e, f) == key:
                        yield e, f
                        break


def build_mesh(nodes, elements, thickness=1.0, kind=None):
    """Validate connectivity/orientation and precompute geometry caches.

    delta_e is the element's shortest edge; delta_min the global minimum.
    Raises MeshError for dangling node references, duplicate elements, or
    inverted elements (non-positive Jacobian at any Gauss point).
    """
    nodes = np.ascontiguousarray(nodes, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
        raise MeshError("nodes must be (nn, 2) or (nn, 3)")
    if elements.ndim != 2 or elements.shape[1] not in (4, 8):
        raise MeshError("elements must be (ne, 4) Q4 or (ne, 8) H8")
    dim = nodes.shape[1]
    nen = elements.shape[1]
    if (dim, nen) not in ((2, 4), (3, 8)):
        raise MeshError(f"node dimension {dim} incompatible with {nen}-node elements")
    if kind is None:
        kind = "Q4" if nen == 4 else "H8"
    if dim == 2 and thickness <= 0.0:
        raise MeshError(f"thickness must be positive for 2-D meshes, got {thickness}")

    if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
        raise MeshError("dangling node reference in element table")
    seen = set()
    for e, conn in enumerate(elements):
        key = tuple(sorted(conn))
        if len(set(key)) != nen:
            raise MeshError(f"element {e} repeats a node")
        if key in seen:
            raise MeshError(f"duplicate element {e}")
        seen.add(key)

    mesh = Mesh(nodes=nodes, elements=elements, kind=kind,
                thickness=thickness if dim == 2 else 1.0)

    # Orientation check and volumes in one pass (raises on detJ <= 0).
    _, detJ, rule = batch_element_gradients(nodes[elements], kind)
    volumes = rule.weights @ detJ
    if dim == 2:
        volumes = volumes * mesh.thickness
    mesh.volumes = volumes

    corner = nodes[elements]  # (ne, nen, dim)
    edges = mesh.local_edges
    edge_len = np.linalg.norm(corner[:, edges[:, 1]] - corner[:, edges[:, 0]], axis=2)
    mesh.delta_e = edge_len.min(axis=1)
    mesh.delta_min = float(mesh.delta_e.min())
    mesh.centroids = corner.mean(axis=1)

    # Node -> incident elements (CSR layout), lumped volumes, nodal sizes.
    flat = elements.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=len(nodes))
    mesh._node_elem_offsets = np.concatenate([[0], np.cumsum(counts)])
    mesh._node_elem_flat = order // nen
    mesh.node_volumes = np.zeros(len(nodes))
    np.add.at(mesh.node_volumes, flat, np.repeat(volumes / nen, nen))
    mesh.node_delta = np.zeros(len(nodes))
    np.maximum.at(mesh.node_delta, flat, np.repeat(mesh.delta_e, nen))

    # Face adjacency: interior faces have exactly 2 owners, boundary 1.
    owners = {}
    for e in range(len(elements)):
        for f in range(len(mesh.local_faces)):
            owners.setdefault(mesh.face_key(e, f), []).append(e)
    for key, owner in owners.items():
        if len(owner) > 2:
            raise MeshError(f"non-manifold face {key} shared by {len(owner)} elements")
    mesh.face_owners = owners
    return mesh


def generate_tensor_grid(axes, thickness=1.0):
    """Structured grid from per-axis coordinate arrays (2 -> Q4, 3 -> H8)."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    for a in axes:
        if len(a) < 2:
            raise MeshError("each axis needs at least 2 coordinates (1 division)")
        if np.any(np.diff(a) <= 0.0):
            raise MeshError("axis coordinates must be strictly increasing")
    if len(axes) == 2:
        xs, ys = axes
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        nx, ny = len(xs) - 1, len(ys) - 1
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        n0 = j.ravel() * (nx + 1) + i.ravel()
        elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
        return build_mesh(nodes, elements, thickness=thickness, kind="Q4")
    if len(axes) == 3:
        xs, ys, zs = axes
        nx, ny, nz = len(xs) - 1, len(ys) - 1, len(zs) - 1
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        # node id = (k*(ny+1) + j)*(nx+1) + i
        nodes = np.column_stack([np.transpose(X, (2, 1, 0)).ravel(),
                                 np.transpose(Y, (2, 1, 0)).ravel(),
                                 np.transpose(Z, (2, 1, 0)).ravel()])
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        n0 = (k * (ny + 1) + j) * (nx + 1) + i
        dz = (ny + 1) * (nx + 1)
        bottom = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
        elements = np.hstack([bottom, bottom + dz])
        return build_mesh(nodes, elements, kind="H8")
    raise MeshError("axes must have length 2 or 3")


def generate_structured_grid(bbox, divisions, thickness=1.0):
    """Axis-aligned uniform grid over bbox = [(lo, hi), ...]."""
    bbox = [tuple(map(float, b)) for b in bbox]
    if len(bbox) != len(divisions):
        raise MeshError("bbox and divisions must have matching dimension")
    axes = []
    for (lo, hi), n in zip(bbox, divisions):
        if n < 1:
            raise MeshError(f"divisions must be >= 1 per axis, got {n}")
        if hi <= lo:
            raise MeshError(f"zero-measure bbox axis [{lo}, {hi}]")
        axes.append(np.linspace(lo, hi, int(n) + 1))
    return generate_tensor_grid(axes, thickness=thickness)


# ---------------------------------------------------------------------------
# Crack geometry


@dataclass(frozen=True)
class CrackPath:
    """A 2-D polyline crack (growable at its tips) or a fixed planar convex
    polygon in 3-D.

    Tips are vertex 0 and vertex -1 of the polyline; `active_tips` lists the
    growable ones. 3-D cracks are immutable and have no active tips.
    """

    vertices: np.ndarray
    active_tips: tuple = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise CrackError("crack vertices must be (nv, 2) or (nv, 3)")
        if self.dim == 2:
            if len(v) < 2:
                raise CrackError("2-D crack needs at least 2 vertices")
            seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
            if np.any(seg <= 0.0):
                raise CrackError("crack segments must have positive length")
            tips = (0, 1) if self.active_tips is None else tuple(self.active_tips)
            if any(t not in (0, 1) for t in tips):
                raise CrackError("active tips must be a subset of (0, 1)")
            object.__setattr__(self, "active_tips", tips)
        else:
            if len(v) < 3:
                raise CrackError("3-D crack polygon needs at least 3 vertices")
            n = _newell_normal(v)
            dev = np.abs((v - v.mean(axis=0)) @ n)
            scale = max(np.ptp(v, axis=0).max(), 1.0)
            if dev.max() > 1e-9 * scale:
                raise CrackError("3-D crack polygon is not planar")
            if not _is_convex_polygon(v, n):
                raise CrackError("3-D crack polygon must be convex")
            object.__setattr__(self, "active_tips", ())

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def segments(self):
        """(ns, 2, dim) consecutive vertex pairs (2-D polyline only)."""
        v = self.vertices
        return np.stack([v[:-1], v[1:]], axis=1)

    @property
    def plane_normal(self):
        return _newell_normal(self.vertices)

    def tip_position(self, tip):
        return self.vertices[0] if tip == 0 else self.vertices[-1]

    def tip_direction(self, tip):
        """Unit vector pointing out of the crack at a tip (growth direction)."""
        v = self.vertices
        d = v[0] - v[1] if tip == 0 else v[-1] - v[-2]
        return d / np.linalg.norm(d)

    def extended(self, tip, new_vertex):
        """New CrackPath with one vertex appended at the given tip."""
        if self.dim != 2:
            raise CrackError("3-D cracks are immutable")
        if tip not in self.active_tips:
            raise CrackError(f"tip {tip} is not active")
        new_vertex = np.asarray(new_vertex, dtype=float)
        if tip == 0:
            v = np.vstack([new_vertex, self.vertices])
        else:
            v = np.vstack([self.vertices, new_vertex])
        return CrackPath(v, active_tips=self.active_tips)

    def total_length(self):
        return float(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1).sum())


def _newell_normal(vertices):
    v = np.asarray(vertices, dtype=float)
    n = np.zeros(3)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        n += np.cross(a, b)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise CrackError("degenerate crack polygon")
    return n / norm


def _is_convex_polygon(vertices, normal):
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    turns = np.cross(e, np.roll(e, -1, axis=0)) @ normal
    scale = np.max(np.abs(turns)) or 1.0
    return np.all(turns >= -1e-12 * scale) or np.all(turns <= 1e-12 * scale)


# ---------------------------------------------------------------------------
# Segment / crack intersection predicates


def segments_cross_segment(p1, p2, q1, q2):
    """Vectorized: does each segment (p1[i], p2[i]) intersect segment (q1, q2)?

    Touching endpoints and collinear overlap count as intersection.
    """
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    rx, ry = q2[0] - q1[0], q2[1] - q1[1]
    d1 = rx * (p1[:, 1] - q1[1]) - ry * (p1[:, 0] - q1[0])
    d2 = rx * (p2[:, 1] - q1[1]) - ry * (p2[:, 0] - q1[0])
    sx = p2[:, 0] - p1[:, 0]
    sy = p2[:, 1] - p1[:, 1]
    d3 = sx * (q1[1] - p1[:, 1]) - sy * (q1[0] - p1[:, 0])
    d4 = sx * (q2[1] - p1[:, 1]) - sy * (q2[0] - p1[:, 0])
    proper = ((d1 > 0) != (d2 > 0)) & (d1 != 0) & (d2 != 0) \
        & ((d3 > 0) != (d4 > 0)) & (d3 != 0) & (d4 != 0)
    qlo = np.minimum(q1, q2)
    qhi = np.maximum(q1, q2)
    plo = np.minimum(p1, p2)
    phi = np.maximum(p1, p2)
    touch = ((d1 == 0) & np.all((p1 >= qlo) & (p1 <= qhi), axis=1)) \
        | ((d2 == 0) & np.all((p2 >= qlo) & (p2 <= qhi), axis=1)) \
        | ((d3 == 0) & np.all((q1 >= plo) & (q1 <= phi), axis=1)) \
        | ((d4 == 0) & np.all((q2 >= plo) & (q2 <= phi), axis=1))
    return proper | touch


def segments_cross_polygon(p1, p2, polygon, normal=None):
    """Vectorized: does each 3-D segment cross the planar convex polygon?

    A segment crosses when it meets the polygon's plane (touching counts) at
    a point inside or on the polygon boundary.
    """
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    poly = np.asarray(polygon, dtype=float)
    if normal is None:
        normal = _newell_normal(poly)
    origin = poly.mean(axis=0)
    s1 = (p1 - origin) @ normal
    s2 = (p2 - origin) @ normal
    hit = (s1 * s2) <= 0.0
    out = np.zeros(len(p1), dtype=bool)
    if not np.any(hit):
        return out
    idx = np.flatnonzero(hit)
    a, b = p1[idx], p2[idx]
    sa, sb = s1[idx], s2[idx]
    denom = sa - sb
    both_on_plane = (sa == 0.0) & (sb == 0.0)
    t = np.where(both_on_plane, 0.5, sa / np.where(denom == 0.0, 1.0, denom))
    x = a + t[:, None] * (b - a)
    inside = _points_in_convex_polygon(x, poly, normal)
    # In-plane segments: accept if either endpoint or the midpoint is inside.
    if np.any(both_on_plane):
        deg = np.flatnonzero(both_on_plane)
        inside[deg] |= _points_in_convex_polygon(a[deg], poly, normal)
        inside[deg] |= _points_in_convex_polygon(b[deg], poly, normal)
    out[idx] = inside
    return out


def _points_in_convex_polygon(x, poly, normal):
    """Points on or inside a planar convex polygon (boundary counts)."""
    edges = np.roll(poly, -1, axis=0) - poly
    scale = np.linalg.norm(edges, axis=1).max()
    tol = 1e-12 * scale * scale
    # Winding sign of the polygon itself w.r.t. the normal.
    sign = np.sign(np.cross(edges, np.roll(edges, -1, axis=0)).sum(axis=0) @ normal)
    inside = np.ones(len(x), dtype=bool)
    for v, e in zip(poly, edges):
        c = np.cross(e, x - v) @ normal
        inside &= (sign * c) >= -tol
    return inside


def bonds_cross_crack(p1, p2, crack):
    """Vectorized bond/crack intersection for bonds (p1[i], p2[i])."""
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    if crack is None:
        return np.zeros(len(p1), dtype=bool)
    if crack.dim == 2:
        out = np.zeros(len(p1), dtype=bool)
        for q1, q2 in crack.segments:
            out |= segments_cross_segment(p1, p2, q1, q2)
        return out
    return segments_cross_polygon(p1, p2, crack.vertices, crack.plane_normal)


def bond_crosses_crack(x_i, x_m, crack):
    """Does the bond from x_i to x_m cross the crack (touching counts)?"""
    return bool(bonds_cross_crack(np.asarray(x_i)[None], np.asarray(x_m)[None], crack)[0])


# ---------------------------------------------------------------------------
# Element classification


@dataclass
class ElementClassification:
    """Per-element labels {0: standard, 1: alpha-PD, 2: beta-PD} plus the
    per-node PD flag. Kept immutable in spirit: updates build a new one."""

    labels: np.ndarray      # (ne,) int8
    is_pd_node: np.ndarray  # (nn,) bool
    m_beta: float
    r_beta: float
    crack_vertices: np.ndarray = field(default=None, repr=False)

    @property
    def alpha_elements(self):
        return np.flatnonzero(self.labels == ALPHA_PD)

    @property
    def beta_elements(self):
        return np.flatnonzero(self.labels == BETA_PD)

    @property
    def pd_elements(self):
        return np.flatnonzero(self.labels != STANDARD)

    @property
    def standard_elements(self):
        return np.flatnonzero(self.labels == STANDARD)

    @property
    def pd_nodes(self):
        return np.flatnonzero(self.is_pd_node)


def _alpha_mask(mesh, crack):
    """Elements whose edges the crack touches, plus (2-D) elements containing
    a crack vertex — catches growth increments that land inside one element."""
    ne = mesh.n_elements
    mask = np.zeros(ne, dtype=bool)
    if crack is None:
        return mask
    edges = mesh.local_edges
    conn = mesh.elements[:, edges]               # (ne, nedge, 2)
    p1 = mesh.nodes[conn[:, :, 0].ravel()]
    p2 = mesh.nodes[conn[:, :, 1].ravel()]
    if mesh.dim == 2:
        hit = np.zeros(len(p1), dtype=bool)
        for q1, q2 in crack.segments:
            hit |= segments_cross_segment(p1, p2, q1, q2)
        mask = hit.reshape(ne, len(edges)).any(axis=1)
        for v in crack.vertices:
            for e in _elements_containing_point(mesh, v):
                mask[e] = True
    else:
        hit = segments_cross_polygon(p1, p2, crack.vertices, crack.plane_normal)
        mask = hit.reshape(ne, len(edges)).any(axis=1)
    return mask


def _elements_containing_point(mesh, p):
    """Candidate-filtered exact containment test (2-D convex Q4 only)."""
    circum = np.linalg.norm(mesh.nodes[mesh.elements] - mesh.centroids[:, None, :],
                            axis=2).max()
    tree = _centroid_tree(mesh)
    out = []
    for e in tree.query_ball_point(p, circum * (1.0 + 1e-9)):
        quad = mesh.nodes[mesh.elements[e]]
        edge = np.roll(quad, -1, axis=0) - quad
        rel = p - quad
        cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
        scale = (edge * edge).sum(axis=1).max()
        if np.all(cross >= -1e-12 * scale):
            out.append(e)
    return out


def _centroid_tree(mesh):
    tree = getattr(mesh, "_centroid_tree_cache", None)
    if tree is None:
        tree = cKDTree(mesh.centroids)
        mesh._centroid_tree_cache = tree
    return tree


def classify_elements(mesh, crack, m_beta):
    """Label elements standard/alpha/beta for the current crack.

    Pure function of (mesh, crack, m_beta); beta promotion uses centroid
    distance to all alpha centroids (radius r_beta = m_beta * delta_min),
    and m_beta < 1 yields no beta elements at all.
    """
    if m_beta < 0:
        raise MeshError(f"m_beta must be >= 0, got {m_beta}")
    labels = np.zeros(mesh.n_elements, dtype=np.int8)
    alpha = _alpha_mask(mesh, crack)
    labels[alpha] = ALPHA_PD
    r_beta = m_beta * mesh.delta_min
    if m_beta >= 1.0 and np.any(alpha):
        tree = cKDTree(mesh.centroids[alpha])
        rest = np.flatnonzero(~alpha)
        d, _ = tree.query(mesh.centroids[rest], k=1)
        labels[rest[d <= r_beta]] = BETA_PD
    is_pd = np.zeros(mesh.n_nodes, dtype=bool)
    is_pd[np.unique(mesh.elements[labels != STANDARD])] = True
    return ElementClassification(
        labels=labels, is_pd_node=is_pd, m_beta=m_beta, r_beta=r_beta,
        crack_vertices=None if crack is None else crack.vertices.copy(),
    )


# Precedence when merging classifications: alpha > beta > standard.
_RANK = np.array([0, 2, 1])
_UNRANK = np.array([STANDARD, BETA_PD, ALPHA_PD])


def update_classification(classification, mesh, crack_after_growth):
    """Reclassify for a grown crack; PD labels never revert to standard."""
    old_v = classification.crack_vertices
    if old_v is not None and not _extends(old_v, crack_after_growth.vertices):
        raise CrackError("crack does not extend the previous geometry")
    fresh = classify_elements(mesh, crack_after_growth, classification.m_beta)
    rank = np.maximum(_RANK[classification.labels], _RANK[fresh.labels])
    labels = _UNRANK[rank].astype(np.int8)
    is_pd = np.zeros(mesh.n_nodes, dtype=bool)
    is_pd[np.unique(mesh.elements[labels != STANDARD])] = True
    return ElementClassification(
        labels=labels, is_pd_node=is_pd, m_beta=classification.m_beta,
        r_beta=classification.r_beta, crack_vertices=crack_after_growth.vertices.copy(),
    )


def _extends(old_vertices, new_vertices):
    m, n = len(old_vertices), len(new_vertices)
    if m > n:
        return False
    for s in range(n - m + 1):
        if np.array_equal(new_vertices[s:s + m], old_vertices):
            return True
    return False


# ---------------------------------------------------------------------------
# Node families


@dataclass
class NodeFamily:
    """Horizon-ball neighborhood of one PD node.

    members[0] is the owner itself (xi = 0). Weights follow the Gauss bell
    omega = exp(-(|xi| / (c*delta))^2); volumes are the lumped nodal volumes.
    mu flags bond status and only ever transitions 1 -> 0.
    """

    owner: int
    members: np.ndarray   # (M,) node ids
    xi: np.ndarray        # (M, dim) relative positions
    volumes: np.ndarray   # (M,)
    weights: np.ndarray   # (M,)
    mu: np.ndarray        # (M,) uint8
    delta: float

    @property
    def n_members(self):
        return len(self.members)

    def intact_count(self):
        """Unbroken non-self bonds."""
        return int(self.mu[1:].sum())


def build_families(mesh, classification, m_delta=3.0, c=1.0 / 3.0, crack=None,
                   owners=None):
    """Build the horizon family of every PD node (or of `owners` only).

    The horizon is delta = m_delta * (max element size over the node's
    incident elements). Membership is a closed-ball query (relative slack
    1e-9 so lattice neighbors at exactly delta stay in). Bonds crossing the
    crack are broken immediately (mu = 0).
    """
    if c <= 0.0:
        raise FamilyError(f"weight decay constant c must be positive, got {c}")
    pd_nodes = classification.pd_nodes if owners is None else np.asarray(owners, dtype=np.int64)
    families = {}
    if len(pd_nodes) == 0:
        return families
    tree = cKDTree(mesh.nodes)
    deltas = m_delta * mesh.node_delta[pd_nodes]
    hits = tree.query_ball_point(mesh.nodes[pd_nodes], deltas * (1.0 + 1e-9))
    min_members = _MIN_NEIGHBORS[mesh.dim]
    for n, delta, found in zip(pd_nodes, deltas, hits):
        members = np.asarray(sorted(found), dtype=np.int64)
        members = np.concatenate([[n], members[members != n]])
        if len(members) - 1 < min_members:
            raise FamilyError(
                f"family of node {n} has {len(members) - 1} neighbors; "
                f"need at least {min_members} to invert the shape tensor"
            )
        xi = mesh.nodes[members] - mesh.nodes[n]
        r = np.linalg.norm(xi, axis=1)
        families[int(n)] = NodeFamily(
            owner=int(n),
            members=members,
            xi=xi,
            volumes=mesh.node_volumes[members].copy(),
            weights=np.exp(-((r / (c * delta)) ** 2)),
            mu=np.ones(len(members), dtype=np.uint8),
            delta=float(delta),
        )
    if crack is not None:
        break_bonds(families, mesh, crack)
    return families


def break_bonds(families, mesh, crack, segments=None):
    """Set mu = 0 on bonds crossing the crack; returns the changed owners.

    `segments` (2-D, shape (S, 2, 2)) restricts the test to those segments,
    so growth steps only pay for the new tip pieces. The self bond never
    breaks.
    """
    if crack is None:
        return set()
    changed = set()
    if crack.dim == 2:
        segs = crack.segments if segments is None else np.asarray(segments, dtype=float)
        if len(segs) == 0:
            return changed
        mids = segs.mean(axis=1)
        half = 0.5 * np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
        for fam in families.values():
            x0 = mesh.nodes[fam.owner]
            near = np.linalg.norm(mids - x0, axis=1) <= fam.delta * 1.001 + half
            if not np.any(near):
                continue
            p1 = np.broadcast_to(x0, fam.xi.shape)
            p2 = mesh.nodes[fam.members]
            cross = np.zeros(fam.n_members, dtype=bool)
            for q1, q2 in segs[near]:
                cross |= segments_cross_segment(p1, p2, q1, q2)
            cross[0] = False
            if np.any(cross & (fam.mu == 1)):
                fam.mu[cross] = 0
                changed.add(fam.owner)
    else:
        poly = crack.vertices
        normal = crack.plane_normal
        center = poly.mean(axis=0)
        radius = np.linalg.norm(poly - center, axis=1).max()
        for fam in families.values():
            x0 = mesh.nodes[fam.owner]
            if np.linalg.norm(x0 - center) > fam.delta * 1.001 + radius:
                continue
            p1 = np.broadcast_to(x0, fam.xi.shape)
            p2 = mesh.nodes[fam.members]
            cross = segments_cross_polygon(p1, p2, poly, normal)
            cross[0] = False
            if np.any(cross & (fam.mu == 1)):
                fam.mu[cross] = 0
                changed.add(fam.owner)
    for owner in changed:
        fam = families[owner]
        if fam.intact_count() < _MIN_NEIGHBORS[mesh.dim]:
            raise FamilyError(
                f"crack broke too many bonds of node {owner}: "
                f"{fam.intact_count()} intact neighbors left"
            )
    return changed


# ---------------------------------------------------------------------------
# Plain-text mesh / crack formats


def read_mesh(path):
    """Read the plain-text mesh format.

    Header `dim nnodes nelems thickness`, then `id x y [z]` node lines, then
    `id kind n1..` element lines (ids 0-based and contiguous).
    """
    with open(path) as f:
        tokens = [line.split() for line in f if line.strip() and not line.lstrip().startswith("#")]
    if not tokens:
        raise MeshError(f"{path}: empty mesh file")
    dim, nn, ne = (int(t) for t in tokens[0][:3])
    thickness = float(tokens[0][3])
    if len(tokens) != 1 + nn + ne:
        raise MeshError(f"{path}: expected {1 + nn + ne} lines, got {len(tokens)}")
    nodes = np.zeros((nn, dim))
    seen = np.zeros(nn, dtype=bool)
    for t in tokens[1:1 + nn]:
        i = int(t[0])
        if not 0 <= i < nn or seen[i]:
            raise MeshError(f"{path}: bad or duplicate node id {i}")
        seen[i] = True
        nodes[i] = [float(v) for v in t[1:1 + dim]]
    nen = 4 if dim == 2 else 8
    elements = np.zeros((ne, nen), dtype=np.int64)
    kind = None
    seen = np.zeros(ne, dtype=bool)
    for t in tokens[1 + nn:]:
        i = int(t[0])
        if not 0 <= i < ne or seen[i]:
            raise MeshError(f"{path}: bad or duplicate element id {i}")
        seen[i] = True
        if kind is None:
            kind = t[1]
        elif t[1] != kind:
            raise MeshError(f"{path}: mixed element kinds {kind}/{t[1]}")
        elements[i] = [int(v) for v in t[2:2 + nen]]
    return build_mesh(nodes, elements, thickness=thickness, kind=kind)


def write_mesh(mesh, path):
    with open(path, "w") as f:
        f.write(f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements} {mesh.thickness:.17g}\n")
        for i, x in enumerate(mesh.nodes):
            f.write(f"{i} " + " ".join(f"{v:.17g}" for v in x) + "\n")
        for e, conn in enumerate(mesh.elements):
            f.write(f"{e} {mesh.kind} " + " ".join(str(n) for n in conn) + "\n")


def read_crack(path, dim):
    """Read a crack: `n` then n segment lines `x1 y1 x2 y2` (2-D, chained
    tip-to-tip) or n polygon vertex lines `x y z` (3-D)."""
    with open(path) as f:
        tokens = [line.split() for line in f if line.strip() and not line.lstrip().startswith("#")]
    if not tokens:
        raise CrackError(f"{path}: empty crack file")
    n = int(tokens[0][0])
    rows = [[float(v) for v in t] for t in tokens[1:1 + n]]
    if len(rows) != n:
        raise CrackError(f"{path}: expected {n} rows, got {len(rows)}")
    if dim == 2:
        vertices = [rows[0][:2]]
        for r in rows:
            if not np.allclose(r[:2], vertices[-1]):
                raise CrackError(f"{path}: crack segments are not chained tip-to-tip")
            vertices.append(r[2:4])
        return CrackPath(np.array(vertices))
    return CrackPath(np.array(rows))


def write_crack(crack, path):
    with open(path, "w") as f:
        if crack.dim == 2:
            segs = crack.segments
            f.write(f"{len(segs)}\n")
            for (x1, y1), (x2, y2) in segs:
                f.write(f"{x1:.17g} {y1:.17g} {x2:.17g} {y2:.17g}\n")
        else:
            f.write(f"{len(crack.vertices)}\n")
            for x, y, z in crack.vertices:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
