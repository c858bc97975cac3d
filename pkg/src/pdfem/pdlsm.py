"""Peridynamic least-squares nonlocal operators.

Everything here is per-node machinery built from a NodeFamily: the moment
(shape) tensor A, the bond coefficient vectors g (first derivatives) and d
(second derivatives), the nodal strain operator C, the bond stiffness kernel
G, and the internal-force operator H with L^pd = H u_f.

Monomial ordering (and therefore derivative ordering) is fixed as

    2-D:  x, y, x^2, y^2, xy
    3-D:  x, y, z, x^2, y^2, z^2, xy, yz, xz

so g = (gx, gy[, gz]) and d = (dxx, dyy[, dzz], dxy[, dyz, dxz]).  The moment
rows use the raw monomials while the columns carry the Taylor factors (1/2 on
the squared terms only), which makes A intentionally unsymmetric.

A is assembled and factorized in nondimensional form (lengths divided by the
horizon, volumes by their family sum): the raw moments mix units m^2..m^6 and
are numerically useless beyond a few family diameters.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import SingularFamilyError

_RCOND_FLOOR = 1e-14


def _scaled_monomials(xi, dim):
    """Rows of raw monomials xihat and Taylor-weighted columns p for scaled xi."""
    if dim == 2:
        x, y = xi[:, 0], xi[:, 1]
        quad = np.column_stack([x * x, y * y, x * y])
        taylor = np.array([0.5, 0.5, 1.0])
    else:
        x, y, z = xi[:, 0], xi[:, 1], xi[:, 2]
        quad = np.column_stack([x * x, y * y, z * z, x * y, y * z, x * z])
        taylor = np.array([0.5, 0.5, 0.5, 1.0, 1.0, 1.0])
    xihat = np.hstack([xi, quad])
    p = np.hstack([xi, quad * taylor])
    return xihat, p


@dataclass
class ShapeTensor:
    """Family moment matrix, kept both raw (physical units) and factorized in
    nondimensional form for the coefficient solves."""

    A: np.ndarray        # raw units, 5x5 or 9x9
    delta: float
    volume_scale: float
    lu: tuple
    rcond: float
    dim: int


def assemble_shape_tensor(family, check_invertible=True):
    """A = sum over intact bonds of omega * V * xihat(xi) p(xi)^T.

    Raises SingularFamilyError when the nondimensionalized A has reciprocal
    condition <= 1e-14 (degenerate family geometry); pass
    check_invertible=False to inspect such tensors anyway.
    """
    dim = family.xi.shape[1]
    mask = family.mu == 1
    xi = family.xi[mask] / family.delta
    vol = family.volumes[mask]
    vscale = vol.sum()
    w = family.weights[mask] * (vol / vscale)
    xihat, p = _scaled_monomials(xi, dim)
    A_nd = (xihat * w[:, None]).T @ p

    sv = np.linalg.svd(A_nd, compute_uv=False)
    rcond = float(sv[-1] / sv[0]) if sv[0] > 0.0 else 0.0
    if check_invertible and rcond <= _RCOND_FLOOR:
        raise SingularFamilyError(
            f"shape tensor of node {family.owner} is singular "
            f"(rcond {rcond:.2e}); family geometry is degenerate"
        )
    lu = lu_factor(A_nd) if rcond > _RCOND_FLOOR else None

    scale = np.concatenate([np.full(dim, family.delta),
                            np.full(A_nd.shape[0] - dim, family.delta ** 2)])
    A = A_nd * np.outer(scale, scale) * vscale
    return ShapeTensor(A=A, delta=family.delta, volume_scale=vscale,
                       lu=lu, rcond=rcond, dim=dim)


def compute_bond_coefficients(shape_tensor, family):
    """g (M, dim) and d (M, n2) per bond from [g; d] = A^-1 xihat(xi).

    Broken bonds get zero rows; the self bond is zero because xihat(0) = 0.
    """
    if shape_tensor.lu is None:
        raise SingularFamilyError(
            f"shape tensor of node {family.owner} is singular; "
            "coefficients are undefined"
        )
    dim = shape_tensor.dim
    xi = family.xi / shape_tensor.delta
    xihat, _ = _scaled_monomials(xi, dim)
    sol = lu_solve(shape_tensor.lu, xihat.T)      # (n, M)
    sol /= shape_tensor.volume_scale
    sol[:dim] /= shape_tensor.delta
    sol[dim:] /= shape_tensor.delta ** 2
    sol[:, family.mu == 0] = 0.0
    return sol[:dim].T.copy(), sol[dim:].T.copy()


def strain_operator(family, g):
    """Voigt strain operator C with strain = C @ u_f (u_f family-ordered).

    Layout: 3 x 2M in 2-D, 6 x 3M in 3-D; the owner's block column is minus
    the sum of the member blocks, so constant fields map to zero strain.
    """
    dim = g.shape[1]
    s = (family.mu * family.weights * family.volumes)
    sg = s[:, None] * g                           # (M, dim)
    M = len(s)
    if dim == 2:
        C = np.zeros((3, 2 * M))
        C[0, 0::2] = sg[:, 0]
        C[1, 1::2] = sg[:, 1]
        C[2, 0::2] = sg[:, 1]
        C[2, 1::2] = sg[:, 0]
    else:
        C = np.zeros((6, 3 * M))
        C[0, 0::3] = sg[:, 0]
        C[1, 1::3] = sg[:, 1]
        C[2, 2::3] = sg[:, 2]
        C[3, 0::3] = sg[:, 1]
        C[3, 1::3] = sg[:, 0]
        C[4, 1::3] = sg[:, 2]
        C[4, 2::3] = sg[:, 1]
        C[5, 0::3] = sg[:, 2]
        C[5, 2::3] = sg[:, 0]
    C[:, :dim] -= C.reshape(C.shape[0], M, dim).sum(axis=1)
    return C


def g_matrices(d, material, dim):
    """Bond stiffness kernels G (M, dim, dim), linear and symmetric in d.

    3-D / plane strain use (lambda + G_shear) on the second-derivative matrix;
    plane stress replaces it with E / (2 (1 - nu)).
    """
    mu_s = material.shear_modulus
    if material.mode == "plane_stress":
        c1 = material.E / (2.0 * (1.0 - material.nu))
    else:
        c1 = material.lame_lambda + mu_s
    M = len(d)
    G = np.zeros((M, dim, dim))
    if dim == 2:
        G[:, 0, 0] = c1 * d[:, 0]
        G[:, 1, 1] = c1 * d[:, 1]
        G[:, 0, 1] = G[:, 1, 0] = c1 * d[:, 2]
        trace = mu_s * (d[:, 0] + d[:, 1])
    else:
        G[:, 0, 0] = c1 * d[:, 0]
        G[:, 1, 1] = c1 * d[:, 1]
        G[:, 2, 2] = c1 * d[:, 2]
        G[:, 0, 1] = G[:, 1, 0] = c1 * d[:, 3]
        G[:, 1, 2] = G[:, 2, 1] = c1 * d[:, 4]
        G[:, 0, 2] = G[:, 2, 0] = c1 * d[:, 5]
        trace = mu_s * (d[:, 0] + d[:, 1] + d[:, 2])
    idx = np.arange(dim)
    G[:, idx, idx] += trace[:, None]
    return G


def g_matrix(d, material):
    """Single-bond form of g_matrices (d is one coefficient vector)."""
    d = np.asarray(d, dtype=float)
    dim = 2 if len(d) == 3 else 3
    return g_matrices(d[None, :], material, dim)[0]


def internal_force_operator(family, d, material):
    """H (dim, dim*M) with internal force density L^pd = H @ u_f.

    Member blocks are mu*omega*G*V; the owner block is minus their sum, so
    rigid translations produce zero force.
    """
    dim = family.xi.shape[1]
    G = g_matrices(d, material, dim)
    s = family.mu * family.weights * family.volumes
    blocks = s[:, None, None] * G                 # (M, dim, dim)
    H = blocks.transpose(1, 0, 2).copy()          # (dim, M, dim)
    H[:, 0, :] -= blocks.sum(axis=0)
    return H.reshape(dim, dim * len(s))


def stress_at_pd_node(C, D, u_family):
    """Voigt stress D C u_f at the family owner."""
    return D @ (C @ u_family)


def displacement_gradient(family, g, u_family):
    """grad[i, j] = du_i/dx_j from the g-coefficient sums over the family."""
    dim = g.shape[1]
    u = np.asarray(u_family, dtype=float).reshape(len(family.members), dim)
    du = u - u[0]
    s = family.mu * family.weights * family.volumes
    return np.einsum("m,mi,mj->ij", s, du, g)


def nonlocal_derivatives(family, g, d, f_values):
    """First and second derivatives of a scalar field sampled on the family.

    Returns (dim,) first derivatives and (3,)/(6,) second derivatives in the
    module's monomial order. Exact for quadratics on nondegenerate families.
    """
    df = np.asarray(f_values, dtype=float) - f_values[0]
    s = family.mu * family.weights * family.volumes
    return (s * df) @ g, (s * df) @ d


@dataclass
class NodeOperators:
    """Bundle of the per-node operators the assembly and the contour need."""

    shape: ShapeTensor
    g: np.ndarray
    d: np.ndarray
    C: np.ndarray
    H: np.ndarray


def build_node_operators(family, material):
    shape = assemble_shape_tensor(family)
    g, d = compute_bond_coefficients(shape, family)
    return NodeOperators(
        shape=shape, g=g, d=d,
        C=strain_operator(family, g),
        H=internal_force_operator(family, d, material),
    )
