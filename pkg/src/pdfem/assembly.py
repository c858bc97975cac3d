"""Global sparse assembly: standard elements, PD body and surface stiffness,
Dirichlet constraints, and consistent load vectors.

The PD element stiffness has two parts. The body part collapses, per PD node
i, to  -(sum of V_e/N_e over PD elements containing i) * H

so it is assembled node-by-node instead of element-by-element (same sums,
one block per node). The surface part adds, for every PD element face NOT
shared with another PD element (shared PD-PD faces cancel pairwise), the
lumped traction blocks  (A_s/N_sn) * N_s D C  on the face's nodes.

Mapping matrices are realized as gather/scatter index lists (dof = dim*node
+ component); nothing boolean is ever materialized. Assembly is a single
deterministic COO pass compressed to CSR; values are generally unsymmetric
(the PD blocks are), so the full matrix is stored.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import AssemblyError
from .fem import batch_stiffness, elasticity_matrix, gauss_rule, shape_functions
from .mesh import STANDARD
from .pdlsm import build_node_operators


def node_dofs(nodes, dim):
    """Global DOF indices of the given nodes, flattened (dof = dim*n + k)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    return (nodes[:, None] * dim + np.arange(dim)).ravel()


def normal_matrix(normal):
    """Traction extractor N with t = N @ sigma_voigt for a unit normal."""
    n = np.asarray(normal, dtype=float)
    if len(n) == 2:
        return np.array([[n[0], 0.0, n[1]], [0.0, n[1], n[0]]])
    return np.array(
        [
            [n[0], 0.0, 0.0, n[1], 0.0, n[2]],
            [0.0, n[1], 0.0, n[0], n[2], 0.0],
            [0.0, 0.0, n[2], 0.0, n[1], n[0]],
        ]
    )


@dataclass
class SparseSystem:
    """Stiffness + loads, optionally with Dirichlet data folded in.

    K is always the raw (unconstrained) operator — reactions need it;
    constrained_K/F appear after apply_dirichlet.
    """

    K: sparse.csr_matrix
    F: np.ndarray
    constrained_K: sparse.csr_matrix = field(default=None, repr=False)
    constrained_F: np.ndarray = field(default=None, repr=False)
    dirichlet_dofs: np.ndarray = None
    dirichlet_values: np.ndarray = None

    @property
    def ndof(self):
        return self.K.shape[0]


class Assembler:
    """Owns the per-mesh caches: standard element matrices (geometry never
    changes between steps) and per-node PD operators (invalidated when the
    crack breaks one of the node's bonds)."""

    def __init__(self, mesh, material):
        self.mesh = mesh
        self.material = material
        self.D = elasticity_matrix(material)
        self._ke = None          # (ne, ndof_e, ndof_e) all-element stiffness
        self._ops = {}           # node id -> NodeOperators

    def invalidate_nodes(self, owners):
        for n in owners:
            self._ops.pop(n, None)

    def node_operators(self, families, n, cache=True):
        ops = self._ops.get(n)
        if ops is None:
            ops = build_node_operators(families[n], self.material)
            if cache:
                self._ops[n] = ops
        return ops

    # -- pieces ------------------------------------------------------------

    def _standard_coo(self, std_elements, cache):
        mesh = self.mesh
        if len(std_elements) == 0:
            return [], [], []
        if cache:
            if self._ke is None:
                self._ke = batch_stiffness(mesh.nodes[mesh.elements],
                                           self.material, mesh.thickness)
            ke = self._ke[std_elements]
        else:
            ke = batch_stiffness(mesh.nodes[mesh.elements[std_elements]],
                                 self.material, mesh.thickness)
        dim = mesh.dim
        ndof_e = mesh.nen * dim
        edofs = (mesh.elements[std_elements][:, :, None] * dim
                 + np.arange(dim)).reshape(len(std_elements), ndof_e)
        rows = np.repeat(edofs, ndof_e, axis=1).ravel().astype(np.int32)
        cols = np.tile(edofs, (1, ndof_e)).ravel().astype(np.int32)
        return [rows], [cols], [ke.ravel()]

    def _pd_body_coo(self, classification, families, cache):
        """-(sum V_e/N_e over PD elements at node) * H, one block per PD node."""
        mesh = self.mesh
        dim = mesh.dim
        pd_el = classification.pd_elements
        scale = np.zeros(mesh.n_nodes)
        np.add.at(scale, mesh.elements[pd_el].ravel(),
                  np.repeat(mesh.volumes[pd_el] / mesh.nen, mesh.nen))
        rows, cols, vals = [], [], []
        for n in classification.pd_nodes:
            if scale[n] == 0.0:
                continue
            ops = self.node_operators(families, int(n), cache)
            fam = families[int(n)]
            cdofs = node_dofs(fam.members, dim).astype(np.int32)
            rdofs = (n * dim + np.arange(dim)).astype(np.int32)
            block = -scale[n] * ops.H
            rows.append(np.repeat(rdofs, len(cdofs)))
            cols.append(np.tile(cdofs, dim))
            vals.append(block.ravel())
        return rows, cols, vals

    def _pd_surface_coo(self, classification, families, cache,
                        include_shared=False):
        """(A_s/N_sn) N_s D C blocks on PD faces.

        Faces shared by two PD elements cancel pairwise and are skipped;
        include_shared=True assembles them anyway (equivalence check).
        """
        mesh = self.mesh
        dim = mesh.dim
        is_pd_el = classification.labels != STANDARD
        rows, cols, vals = [], [], []
        for e in classification.pd_elements:
            for f in range(len(mesh.local_faces)):
                owners = mesh.face_owners[mesh.face_key(e, f)]
                if not include_shared and len(owners) == 2:
                    other = owners[0] if owners[1] == e else owners[1]
                    if is_pd_el[other]:
                        continue
                ids, area, normal, _ = mesh.face_geometry(e, f)
                nsd = normal_matrix(normal) @ self.D
                w = area / len(ids)
                for i in ids:
                    ops = self.node_operators(families, int(i), cache)
                    fam = families[int(i)]
                    cdofs = node_dofs(fam.members, dim).astype(np.int32)
                    rdofs = (i * dim + np.arange(dim)).astype(np.int32)
                    block = w * (nsd @ ops.C)
                    rows.append(np.repeat(rdofs, len(cdofs)))
                    cols.append(np.tile(cdofs, dim))
                    vals.append(block.ravel())
        return rows, cols, vals

    # -- entry point ---------------------------------------------------------

    def assemble(self, classification, families, cache=True,
                 all_faces=False):
        """Global stiffness for the current classification, as SparseSystem
        with a zero load vector. cache=False streams PD operators (one-shot
        big assemblies); all_faces=True disables the shared-PD-face skip."""
        mesh = self.mesh
        ndof = mesh.n_nodes * mesh.dim
        rows, cols, vals = self._standard_coo(classification.standard_elements, cache)
        r2, c2, v2 = self._pd_body_coo(classification, families, cache)
        r3, c3, v3 = self._pd_surface_coo(classification, families, cache,
                                          include_shared=all_faces)
        rows = np.concatenate(rows + r2 + r3) if (rows or r2 or r3) else np.zeros(0, np.int32)
        cols = np.concatenate(cols + c2 + c3) if (cols or c2 or c3) else np.zeros(0, np.int32)
        vals = np.concatenate(vals + v2 + v3) if (vals or v2 or v3) else np.zeros(0)
        K = sparse.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()
        K.sum_duplicates()
        return SparseSystem(K=K, F=np.zeros(ndof))


def assemble_global(mesh, classification, material, families):
    """One-shot convenience wrapper around Assembler."""
    return Assembler(mesh, material).assemble(classification, families, cache=False)


# ---------------------------------------------------------------------------
# Dirichlet constraints


def apply_dirichlet(system, dofs, values):
    """Row-replacement constraints with the column terms moved to F.

    Keeps the unconstrained K on the system so reactions stay recoverable.
    Duplicate constraints must agree; conflicting duplicates are an error.
    """
    dofs = np.asarray(dofs, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if len(dofs) != len(values):
        raise AssemblyError("constraint dofs/values length mismatch")
    if len(dofs) == 0:
        raise AssemblyError("no constraints given (system would be singular)")
    order = np.argsort(dofs, kind="stable")
    dofs, values = dofs[order], values[order]
    dup = dofs[1:] == dofs[:-1]
    if np.any(dup & (values[1:] != values[:-1])):
        bad = dofs[1:][dup & (values[1:] != values[:-1])][0]
        raise AssemblyError(f"conflicting duplicate constraint on dof {bad}")
    keep = np.concatenate([[True], ~dup])
    dofs, values = dofs[keep], values[keep]
    if dofs.min() < 0 or dofs.max() >= system.ndof:
        raise AssemblyError("constraint dof out of range")

    K, F = system.K, system.F
    u_c = np.zeros(system.ndof)
    u_c[dofs] = values
    F_c = F - K @ u_c
    F_c[dofs] = values
    free = np.ones(system.ndof)
    free[dofs] = 0.0
    Pf = sparse.diags(free)
    K_c = (Pf @ K @ Pf + sparse.diags(1.0 - free)).tocsr()
    K_c.eliminate_zeros()
    K_c.sort_indices()
    return SparseSystem(K=K, F=F, constrained_K=K_c, constrained_F=F_c,
                        dirichlet_dofs=dofs, dirichlet_values=values)


# ---------------------------------------------------------------------------
# Loads


def select_boundary_faces(mesh, predicate):
    """Boundary faces whose centroid satisfies the predicate -> [(e, f)]."""
    out = []
    for e, f in mesh.boundary_faces():
        _, _, _, centroid = mesh.face_geometry(e, f)
        if predicate(centroid):
            out.append((e, f))
    return out


def _face_shape_integrals(pts):
    """Integral of each bilinear face shape function over a 3-D quad face."""
    rule = gauss_rule(2)
    w = np.zeros(4)
    for p, wq in zip(rule.points, rule.weights):
        N, dN = shape_functions("Q4", p)
        t1 = dN[:, 0] @ pts
        t2 = dN[:, 1] @ pts
        w += wq * np.linalg.norm(np.cross(t1, t2)) * N
    return w


def assemble_loads(mesh, tractions=(), body_force=None, point_loads=()):
    """Consistent nodal force vector.

    tractions: iterable of (faces, vector) with faces a list of (elem, local
    face) pairs — boundary faces only. body_force: constant vector per unit
    volume. point_loads: (node, vector) pairs.
    """
    dim = mesh.dim
    F = np.zeros(mesh.n_nodes * dim)
    for faces, t in tractions:
        t = np.asarray(t, dtype=float)
        for e, f in faces:
            if len(mesh.face_owners[mesh.face_key(e, f)]) != 1:
                raise AssemblyError(f"traction on interior face {f} of element {e}")
            ids, area, _, _ = mesh.face_geometry(e, f)
            if dim == 2:
                # Straight edge, linear shapes: half the measure to each node.
                w = np.full(2, 0.5 * area)
            else:
                w = _face_shape_integrals(mesh.nodes[ids])
            for i, wi in zip(ids, w):
                F[i * dim:(i + 1) * dim] += wi * t
    if body_force is not None:
        b = np.asarray(body_force, dtype=float)
        rule = gauss_rule(dim)
        scale = mesh.thickness if dim == 2 else 1.0
        nw = np.zeros(mesh.n_nodes)
        corner = mesh.nodes[mesh.elements]
        for p, wq in zip(rule.points, rule.weights):
            N, dN = shape_functions(mesh.kind, p)
            J = np.einsum("ni,enj->eij", dN, corner)
            detJ = np.linalg.det(J)
            np.add.at(nw, mesh.elements.ravel(),
                      (wq * scale * np.outer(detJ, N)).ravel())
        F += np.outer(nw, b).ravel()
    for n, p in point_loads:
        F[n * dim:(n + 1) * dim] += np.asarray(p, dtype=float)
    return F
