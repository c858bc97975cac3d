"""Isoparametric FEM core: shape functions, B/D matrices, Gauss rules,
standard-element stiffness, and Gauss-point stress recovery.

Voigt ordering is (e11, e22, g12) in 2-D and (e11, e22, e33, g12, g23, g13)
in 3-D, with engineering shear components.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MeshError
from .material import Material

# Corner coordinates of the reference element, matching node ordering:
# Q4 counterclockwise, H8 bottom quad then top quad (right-handed).
Q4_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])
H8_CORNERS = np.array(
    [
        (-1.0, -1.0, -1.0),
        (1.0, -1.0, -1.0),
        (1.0, 1.0, -1.0),
        (-1.0, 1.0, -1.0),
        (-1.0, -1.0, 1.0),
        (1.0, -1.0, 1.0),
        (1.0, 1.0, 1.0),
        (-1.0, 1.0, 1.0),
    ]
)

_G = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class GaussRule:
    points: np.ndarray  # (ngp, dim)
    weights: np.ndarray  # (ngp,)


def gauss_rule(dim, order=2):
    """Tensor-product Gauss-Legendre rule on [-1, 1]^dim."""
    x1, w1 = np.polynomial.legendre.leggauss(order)
    grids = np.meshgrid(*([x1] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w1] * dim), indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wgrids:
        w = w * g.ravel()
    return GaussRule(points=pts, weights=w)


def shape_functions(kind, local):
    """Shape function values and local derivatives at a reference point.

    Returns (N (nen,), dN (nen, dim)) with sum(N) = 1 and columnwise
    sum(dN) = 0.
    """
    local = np.asarray(local, dtype=float)
    if kind == "Q4":
        corners = Q4_CORNERS
    elif kind == "H8":
        corners = H8_CORNERS
    else:
        raise MeshError(f"unknown element kind {kind!r}")
    dim = corners.shape[1]
    if local.shape != (dim,):
        raise MeshError(f"local point has wrong dimension for {kind}")
    # N_a = prod_i (1 + xi_i * c_ai) / 2
    terms = 0.5 * (1.0 + corners * local)  # (nen, dim)
    N = terms.prod(axis=1)
    dN = np.empty_like(corners)
    for i in range(dim):
        others = np.delete(terms, i, axis=1).prod(axis=1)
        dN[:, i] = 0.5 * corners[:, i] * others
    return N, dN


def b_matrix(element_coords, local, kind=None):
    """Strain-displacement matrix and Jacobian determinant at a local point."""
    coords = np.asarray(element_coords, dtype=float)
    if kind is None:
        kind = "Q4" if coords.shape == (4, 2) else "H8"
    _, dN = shape_functions(kind, local)
    J = dN.T @ coords  # J[i, j] = d x_j / d xi_i
    detJ = np.linalg.det(J)
    if detJ <= 0.0:
        raise MeshError(f"inverted element: non-positive Jacobian ({detJ:.3e})")
    dNdx = dN @ np.linalg.inv(J).T  # (nen, dim)
    return _b_from_gradients(dNdx), detJ


def _b_from_gradients(dNdx):
    nen, dim = dNdx.shape
    if dim == 2:
        B = np.zeros((3, 2 * nen))
        B[0, 0::2] = dNdx[:, 0]
        B[1, 1::2] = dNdx[:, 1]
        B[2, 0::2] = dNdx[:, 1]
        B[2, 1::2] = dNdx[:, 0]
    else:
        B = np.zeros((6, 3 * nen))
        B[0, 0::3] = dNdx[:, 0]
        B[1, 1::3] = dNdx[:, 1]
        B[2, 2::3] = dNdx[:, 2]
        B[3, 0::3] = dNdx[:, 1]
        B[3, 1::3] = dNdx[:, 0]
        B[4, 1::3] = dNdx[:, 2]
        B[4, 2::3] = dNdx[:, 1]
        B[5, 0::3] = dNdx[:, 2]
        B[5, 2::3] = dNdx[:, 0]
    return B


def elasticity_matrix(material: Material) -> np.ndarray:
    """Elasticity matrix D for the material's mode (plane stress/strain, 3-D)."""
    E, nu = material.E, material.nu
    if material.mode == "plane_stress":
        f = E / (1.0 - nu * nu)
        return f * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])
    if material.mode == "plane_strain":
        if nu >= 0.5 - 1e-12:
            raise ValueError("plane-strain elasticity matrix singular at nu = 0.5")
        f = E / ((1.0 - 2.0 * nu) * (1.0 + nu))
        return f * np.array(
            [[1.0 - nu, nu, 0.0], [nu, 1.0 - nu, 0.0], [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)]]
        )
    if material.mode == "3d":
        if nu >= 0.5 - 1e-12:
            raise ValueError("3-D elasticity matrix singular at nu = 0.5")
        f = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        D = np.zeros((6, 6))
        D[:3, :3] = nu
        np.fill_diagonal(D[:3, :3], 1.0 - nu)
        D[3, 3] = D[4, 4] = D[5, 5] = 0.5 * (1.0 - 2.0 * nu)
        return f * D
    raise ValueError(f"unknown material mode {material.mode!r}")


def standard_element_stiffness(element_coords, material, thickness=1.0):
    """K_e = integral of B^T D B over the element (2x2 / 2x2x2 Gauss)."""
    coords = np.asarray(element_coords, dtype=float)
    dim = coords.shape[1]
    kind = "Q4" if dim == 2 else "H8"
    D = elasticity_matrix(material)
    rule = gauss_rule(dim)
    ndof = coords.shape[0] * dim
    K = np.zeros((ndof, ndof))
    scale = thickness if dim == 2 else 1.0
    for p, w in zip(rule.points, rule.weights):
        B, detJ = b_matrix(coords, p, kind)
        K += (w * detJ * scale) * (B.T @ D @ B)
    return K


def batch_element_gradients(coords_batch, kind):
    """Shape-function global gradients and detJ at all Gauss points, batched.

    coords_batch: (ne, nen, dim). Returns (dNdx (ngp, ne, nen, dim),
    detJ (ngp, ne), gauss rule).
    """
    coords = np.asarray(coords_batch, dtype=float)
    dim = coords.shape[2]
    rule = gauss_rule(dim)
    dNdx_all = []
    detJ_all = []
    for p in rule.points:
        _, dN = shape_functions(kind, p)
        J = np.einsum("ni,enj->eij", dN, coords)
        detJ = np.linalg.det(J)
        if np.any(detJ <= 0.0):
            bad = int(np.argmax(detJ <= 0.0))
            raise MeshError(f"inverted element: non-positive Jacobian in element {bad}")
        Jinv = np.linalg.inv(J)
        dNdx = np.einsum("ni,eji->enj", dN, Jinv)
        dNdx_all.append(dNdx)
        detJ_all.append(detJ)
    return np.array(dNdx_all), np.array(detJ_all), rule


def batch_stiffness(coords_batch, material, thickness=1.0):
    """Stiffness matrices for a batch of same-kind elements: (ne, ndof, ndof)."""
    coords = np.asarray(coords_batch, dtype=float)
    ne, nen, dim = coords.shape
    kind = "Q4" if dim == 2 else "H8"
    D = elasticity_matrix(material)
    dNdx, detJ, rule = batch_element_gradients(coords, kind)
    scale = thickness if dim == 2 else 1.0
    ndof = nen * dim
    K = np.zeros((ne, ndof, ndof))
    for q in range(len(rule.weights)):
        B = _batch_b(dNdx[q])  # (ne, nvoigt, ndof)
        wdet = rule.weights[q] * detJ[q] * scale
        K += np.einsum("eki,kl,elj,e->eij", B, D, B, wdet, optimize=True)
    return K


def _batch_b(dNdx):
    ne, nen, dim = dNdx.shape
    if dim == 2:
        B = np.zeros((ne, 3, 2 * nen))
        B[:, 0, 0::2] = dNdx[:, :, 0]
        B[:, 1, 1::2] = dNdx[:, :, 1]
        B[:, 2, 0::2] = dNdx[:, :, 1]
        B[:, 2, 1::2] = dNdx[:, :, 0]
    else:
        B = np.zeros((ne, 6, 3 * nen))
        B[:, 0, 0::3] = dNdx[:, :, 0]
        B[:, 1, 1::3] = dNdx[:, :, 1]
        B[:, 2, 2::3] = dNdx[:, :, 2]
        B[:, 3, 0::3] = dNdx[:, :, 1]
        B[:, 3, 1::3] = dNdx[:, :, 0]
        B[:, 4, 1::3] = dNdx[:, :, 2]
        B[:, 4, 2::3] = dNdx[:, :, 1]
        B[:, 5, 0::3] = dNdx[:, :, 2]
        B[:, 5, 2::3] = dNdx[:, :, 0]
    return B


def element_gauss_state(element_coords, u_e, material, thickness=1.0):
    """Positions, strain, stress, and displacement gradient at Gauss points.

    Returns (xyz (ngp, dim), strain (ngp, nvoigt), stress (ngp, nvoigt),
    grad_u (ngp, dim, dim)).
    """
    coords = np.asarray(element_coords, dtype=float)
    nen, dim = coords.shape
    kind = "Q4" if dim == 2 else "H8"
    D = elasticity_matrix(material)
    u = np.asarray(u_e, dtype=float).reshape(nen, dim)
    rule = gauss_rule(dim)
    xyz = np.empty((len(rule.weights), dim))
    nv = 3 if dim == 2 else 6
    strain = np.empty((len(rule.weights), nv))
    grad = np.empty((len(rule.weights), dim, dim))
    for q, p in enumerate(rule.points):
        N, dN = shape_functions(kind, p)
        J = dN.T @ coords
        dNdx = dN @ np.linalg.inv(J).T
        xyz[q] = N @ coords
        g = u.T @ dNdx  # g[i, j] = du_i / dx_j
        grad[q] = g
        if dim == 2:
            strain[q] = (g[0, 0], g[1, 1], g[0, 1] + g[1, 0])
        else:
            strain[q] = (g[0, 0], g[1, 1], g[2, 2], g[0, 1] + g[1, 0], g[1, 2] + g[2, 1], g[0, 2] + g[2, 0])
    stress = strain @ D.T
    return xyz, strain, stress, grad


def recover_stress_standard(element_coords, u_e, material):
    """Stress (Voigt) at the element's Gauss points: sigma = D B u_e."""
    _, _, stress, _ = element_gauss_state(element_coords, u_e, material)
    return stress
