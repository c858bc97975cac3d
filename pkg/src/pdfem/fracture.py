"""SIF extraction via the interaction integral and MCTS crack kinematics.

The contour is a closed counterclockwise chain around the tip, mixed from
PD nodes (outside the base circle r = m_r * delta_min, fields from the
nonlocal g-coefficient sums) and Gauss points of standard elements cut by
that circle (fields from B u / D B u). The chain is traversed segment by
segment with a trapezoidal rule; segments that would bridge the crack faces
are dropped, leaving the standard face-to-face open contour (the crack faces
are traction free and contribute nothing).

Auxiliary states are the Williams near-tip expansions with unit K_I or K_II,
with analytic x1-derivatives. Everything in this module works in the tip
frame: x1 along the prospective growth direction, x2 normal to it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import FractureError
from .fem import element_gauss_state, elasticity_matrix
from .mesh import STANDARD
from .pdlsm import assemble_shape_tensor, compute_bond_coefficients, displacement_gradient

PD_POINT, GAUSS_POINT = 0, 1


@dataclass(frozen=True)
class TipFrame:
    """Local crack-tip coordinates: x1 along the growth direction."""

    position: np.ndarray
    direction: np.ndarray  # unit vector, global components

    @classmethod
    def from_crack(cls, crack, tip):
        return cls(position=crack.tip_position(tip).copy(),
                   direction=crack.tip_direction(tip))

    @property
    def rotation(self):
        """Rows are the local axes; local_v = R @ global_v."""
        e1 = self.direction
        return np.array([[e1[0], e1[1]], [-e1[1], e1[0]]])

    def to_local(self, points):
        return (np.atleast_2d(points) - self.position) @ self.rotation.T

    def tensor_to_local(self, T):
        R = self.rotation
        return np.einsum("ij,pjk,lk->pil", R, T, R)


@dataclass
class ContourChain:
    """Tip-frame positions and state-1 fields, ordered counterclockwise."""

    points: np.ndarray   # (P, 2) local coords
    stress: np.ndarray   # (P, 2, 2) local
    strain: np.ndarray   # (P, 2, 2) local
    grad: np.ndarray     # (P, 2, 2) local du_i/dx_j
    source: np.ndarray   # (P,) PD_POINT | GAUSS_POINT
    radius: float

    def __len__(self):
        return len(self.points)


def _voigt2_to_tensor(v):
    v = np.atleast_2d(v)
    t = np.empty((len(v), 2, 2))
    t[:, 0, 0] = v[:, 0]
    t[:, 1, 1] = v[:, 1]
    t[:, 0, 1] = t[:, 1, 0] = 0.5 * v[:, 2]
    return t


def build_contour(mesh, classification, families, material, u, tip_frame, m_r):
    """Select elements cut by the base circle and chain their sample points.

    PD elements contribute their nodes lying strictly outside the circle;
    standard elements contribute all their Gauss points. Points are sorted
    counterclockwise by tip-frame polar angle (ties by radius).
    """
    if mesh.dim != 2:
        raise FractureError("SIF contours are 2-D only")
    r = m_r * mesh.delta_min
    tip = tip_frame.position
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    pad = 1e-9 * max(hi - lo)
    if np.any(tip - r < lo - pad) or np.any(tip + r > hi + pad):
        raise FractureError(f"contour circle (radius {r:.4g}) exits the domain")

    corner = mesh.nodes[mesh.elements]                       # (ne, 4, 2)
    cdist = np.linalg.norm(corner - tip, axis=2)             # (ne, 4)
    dmax = cdist.max(axis=1)
    # Closest approach of the element boundary to the tip (edge projections).
    a = corner
    b = corner[:, [1, 2, 3, 0], :]
    ab = b - a
    denom = np.einsum("efk,efk->ef", ab, ab)
    t = np.clip(np.einsum("efk,efk->ef", tip - a, ab) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    dmin = np.linalg.norm(proj - tip, axis=2).min(axis=1)
    selected = (dmin <= r) & (dmax >= r)

    D = elasticity_matrix(material)
    pts, stress, grad, source = [], [], [], []

    pd_sel = selected & (classification.labels != STANDARD)
    pd_nodes = np.unique(mesh.elements[pd_sel])
    pd_nodes = pd_nodes[np.linalg.norm(mesh.nodes[pd_nodes] - tip, axis=1) > r]
    for n in pd_nodes:
        fam = families[int(n)]
        shape = assemble_shape_tensor(fam)
        g, _ = compute_bond_coefficients(shape, fam)
        dofs = (fam.members[:, None] * 2 + np.arange(2)).ravel()
        gr = displacement_gradient(fam, g, u[dofs])
        pts.append(mesh.nodes[n])
        grad.append(gr)
        eps = np.array([gr[0, 0], gr[1, 1], gr[0, 1] + gr[1, 0]])
        stress.append(_voigt2_to_tensor(D @ eps)[0])
        source.append(PD_POINT)

    std_sel = np.flatnonzero(selected & (classification.labels == STANDARD))
    for e in std_sel:
        dofs = (mesh.elements[e][:, None] * 2 + np.arange(2)).ravel()
        xyz, _, sv, gv = element_gauss_state(mesh.element_coords(e), u[dofs], material)
        for q in range(len(xyz)):
            pts.append(xyz[q])
            grad.append(gv[q])
            stress.append(_voigt2_to_tensor(sv[q])[0])
            source.append(GAUSS_POINT)

    if len(pts) < 8:
        raise FractureError(f"only {len(pts)} contour points around the tip")

    pts = np.array(pts)
    local = tip_frame.to_local(pts)
    stress_l = tip_frame.tensor_to_local(np.array(stress))
    grad_l = tip_frame.tensor_to_local(np.array(grad))
    phi = np.arctan2(local[:, 1], local[:, 0])
    rad = np.linalg.norm(local, axis=1)
    order = np.lexsort((rad, phi))
    local, stress_l, grad_l = local[order], stress_l[order], grad_l[order]
    strain_l = 0.5 * (grad_l + grad_l.transpose(0, 2, 1))
    return ContourChain(points=local, stress=stress_l, strain=strain_l,
                        grad=grad_l, source=np.array(source)[order], radius=r)


# ---------------------------------------------------------------------------
# Williams near-tip auxiliary fields (unit SIF)


def auxiliary_fields(points_local, mode, material):
    """(u, du/dx1, stress, strain) of the unit-K_I or unit-K_II Williams
    field at tip-frame points. Strains come from the mode's D inverse so the
    cross-work identity holds exactly."""
    x = np.atleast_2d(points_local)
    r = np.linalg.norm(x, axis=1)
    if np.any(r == 0.0):
        raise FractureError("auxiliary field evaluated at the crack tip (r = 0)")
    phi = np.arctan2(x[:, 1], x[:, 0])
    Gs = material.shear_modulus
    kap = material.kappa
    c, s = np.cos(phi), np.sin(phi)
    c2, s2 = np.cos(phi / 2), np.sin(phi / 2)
    c32, s32 = np.cos(1.5 * phi), np.sin(1.5 * phi)
    amp = np.sqrt(r / (2.0 * np.pi)) / (2.0 * Gs)
    sig0 = 1.0 / np.sqrt(2.0 * np.pi * r)

    if mode == "I":
        u = amp[:, None] * np.column_stack([c2 * (kap - c), s2 * (kap - c)])
        dphi = amp[:, None] * np.column_stack(
            [-0.5 * s2 * (kap - c) + c2 * s, 0.5 * c2 * (kap - c) + s2 * s])
        sxx = sig0 * c2 * (1.0 - s2 * s32)
        syy = sig0 * c2 * (1.0 + s2 * s32)
        sxy = sig0 * s2 * c2 * c32
    elif mode == "II":
        u = amp[:, None] * np.column_stack([s2 * (kap + 2.0 + c), -c2 * (kap - 2.0 + c)])
        dphi = amp[:, None] * np.column_stack(
            [0.5 * c2 * (kap + 2.0 + c) - s2 * s, 0.5 * s2 * (kap - 2.0 + c) + c2 * s])
        sxx = -sig0 * s2 * (2.0 + c2 * c32)
        syy = sig0 * s2 * c2 * c32
        sxy = sig0 * c2 * (1.0 - s2 * s32)
    else:
        raise FractureError(f"unknown auxiliary mode {mode!r}")

    # du/dx1 = cos(phi) du/dr - sin(phi)/r du/dphi, with du/dr = u / (2r).
    du_dr = u / (2.0 * r[:, None])
    du_dx1 = c[:, None] * du_dr - (s / r)[:, None] * dphi

    sig_voigt = np.column_stack([sxx, syy, sxy])
    D = elasticity_matrix(material)
    eps_voigt = np.linalg.solve(D, sig_voigt.T).T
    return u, du_dx1, _voigt2_to_tensor(sig_voigt), _voigt2_to_tensor(eps_voigt)


# ---------------------------------------------------------------------------
# Interaction integral and SIFs


def interaction_integral(chain, mode, material):
    """Trapezoidal I-integral of the chain against the unit auxiliary mode.

    Segments are traversed counterclockwise with per-segment outward normals;
    segments that would cross the crack faces (negative x1 axis) are skipped.
    """
    P = len(chain)
    x = chain.points
    _, du2, sig2, eps2 = auxiliary_fields(x, mode, material)

    w = np.einsum("pij,pij->p", chain.stress, eps2)
    w_check = np.einsum("pij,pij->p", sig2, chain.strain)
    scale = np.max(np.abs(w)) or 1.0
    if np.max(np.abs(w - w_check)) > 1e-8 * scale:
        raise FractureError("cross-work identity violated on the contour")

    du1 = chain.grad[:, :, 0]      # du^(1)/dx1
    nxt = np.roll(np.arange(P), -1)
    total = 0.0
    for p in range(P):
        q = nxt[p]
        seg = x[q] - x[p]
        length = math.hypot(seg[0], seg[1])
        if length == 0.0:
            raise FractureError("zero-length contour segment")
        # Drop segments bridging the crack faces (crossing x1 < 0, x2 = 0).
        y1, y2 = x[p, 1], x[q, 1]
        if (y1 > 0.0) != (y2 > 0.0):
            xc = x[p, 0] + (0.0 - y1) / (y2 - y1) * (x[q, 0] - x[p, 0])
            if xc < 0.0:
                continue
        normal = np.array([seg[1], -seg[0]]) / length
        Fp = _integrand(w[p], chain.stress[p], sig2[p], du1[p], du2[p], normal)
        Fq = _integrand(w[q], chain.stress[q], sig2[q], du1[q], du2[q], normal)
        total += 0.5 * (Fp + Fq) * length
    return total


def _integrand(w, sig1, sig2, du1, du2, n):
    t1 = sig1 @ n
    t2 = sig2 @ n
    return w * n[0] - (t1 @ du2 + t2 @ du1)


@dataclass(frozen=True)
class SifResult:
    K_I: float
    K_II: float
    K_eq: float
    theta_c: float
    m_r: float = 0.0
    n_points: int = 0


def compute_sifs(chain, material, m_r=0.0):
    """K_I and K_II from the two auxiliary modes, plus MCTS direction/onset."""
    half_E = 0.5 * material.E_eff
    K_I = half_E * interaction_integral(chain, "I", material)
    K_II = half_E * interaction_integral(chain, "II", material)
    theta = mcts_direction(K_I, K_II)
    return SifResult(K_I=K_I, K_II=K_II, K_eq=equivalent_sif(K_I, K_II, theta),
                     theta_c=theta, m_r=m_r, n_points=len(chain))


def sif_at_tip(mesh, classification, families, material, u, crack, tip, m_r):
    frame = TipFrame.from_crack(crack, tip)
    chain = build_contour(mesh, classification, families, material, u, frame, m_r)
    return compute_sifs(chain, material, m_r=m_r)


# ---------------------------------------------------------------------------
# MCTS: kink angle, equivalent SIF, growth


def mcts_direction(K_I, K_II):
    """Maximum circumferential stress kink angle theta_c in (-pi, pi).

    The closed form divides by K_II; pure mode I takes the continuity limit
    theta_c = 0. The kink sign is opposite to the sign of K_II.
    """
    if K_I == 0.0 and K_II == 0.0:
        raise FractureError("kink angle undefined for K_I = K_II = 0")
    if abs(K_II) <= 1e-12 * abs(K_I):
        return 0.0
    ratio = K_I / K_II
    root = 0.25 * math.sqrt(ratio * ratio + 8.0)
    branch = -root if K_II > 0.0 else root
    return 2.0 * math.atan(0.25 * ratio + branch)


def equivalent_sif(K_I, K_II, theta_c):
    """K_eq = K_I cos^3(t/2) - 3/2 K_II cos(t/2) sin(t)."""
    half = 0.5 * theta_c
    return K_I * math.cos(half) ** 3 - 1.5 * K_II * math.cos(half) * math.sin(theta_c)


def grow_crack(crack, tip, theta_c, d_c):
    """Append a d_c-long segment at the tip, kinked by theta_c from the
    current tip direction (positive theta_c toward local +x2)."""
    if d_c <= 0.0:
        raise FractureError(f"growth amount must be positive, got {d_c}")
    e1 = crack.tip_direction(tip)
    e2 = np.array([-e1[1], e1[0]])
    direction = math.cos(theta_c) * e1 + math.sin(theta_c) * e2
    return crack.extended(tip, crack.tip_position(tip) + d_c * direction)
