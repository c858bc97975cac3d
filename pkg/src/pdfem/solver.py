"""Static solves, reaction recovery, and the quasi-static propagation driver.

The driver is a sequential state machine: solve -> SIFs at the active tips ->
either grow every critical tip by d_c = alpha*delta_min along its kink angle
(and re-solve at unchanged load) or scale the load toward onset with
dR = min((K_Ic/K_eq - 1) R, dR_max). Exactly one of {grew, incremented,
stopped} happens per recorded step.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import gmres, splu, spilu, LinearOperator

from .assembly import Assembler, apply_dirichlet
from .errors import FractureError, SolveError
from .fracture import grow_crack, sif_at_tip
from .mesh import break_bonds, build_families, classify_elements, update_classification


@dataclass(frozen=True)
class Numerics:
    """Discretization and solver knobs with the standard defaults."""

    m_delta: float = 3.0
    c: float = 1.0 / 3.0
    m_beta: float = 2.1
    m_r: float = 6.0
    alpha: float = 1.0
    solver: str = "auto"        # auto | direct | iterative
    solver_tol: float = 1e-10

    def __post_init__(self):
        for name in ("m_delta", "c", "m_r", "alpha", "solver_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.m_beta < 0:
            raise ValueError("m_beta must be >= 0")
        if self.solver not in ("auto", "direct", "iterative"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True)
class LoadSchedule:
    R0: float
    dR_max: float
    max_steps: int = 200
    max_load: float = None
    max_crack_length: float = None

    def __post_init__(self):
        if self.dR_max <= 0:
            raise ValueError("dR_max must be positive")


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    load: float
    tip_x: float
    tip_y: float
    K_I: float
    K_II: float
    K_eq: float
    theta_c: float
    reaction: float
    grew: bool = False


@dataclass
class SimulationState:
    u: np.ndarray
    load: float
    crack: object
    classification: object
    families: dict
    step: int
    history: list = field(default_factory=list)
    termination: str = ""


# ---------------------------------------------------------------------------
# Linear solve


def solve_static(system, method="auto", tol=1e-10):
    """Solve K u = F (the constrained pair when present).

    Direct sparse LU is the baseline; `iterative` uses ILU-preconditioned
    GMRES (useful for the larger 3-D systems). The result is rejected unless
    ||K u - F|| <= 1e-8 ||F|| (or the K-scaled analog when F ~ 0).
    """
    K = system.constrained_K if system.constrained_K is not None else system.K
    F = system.constrained_F if system.constrained_F is not None else system.F
    if method not in ("auto", "direct", "iterative"):
        raise SolveError(f"unknown solver method {method!r}")

    u = None
    if method in ("auto", "direct"):
        try:
            u = splu(K.tocsc()).solve(F)
        except (MemoryError, RuntimeError) as err:
            if method == "direct":
                raise SolveError(f"direct factorization failed: {err}") from err
    if u is None:
        u = _iterative_solve(K, F, tol)

    r = np.linalg.norm(K @ u - F)
    bound = 1e-8 * np.linalg.norm(F)
    if bound == 0.0:
        knorm = np.abs(K).sum(axis=1).max()
        bound = 1e-8 * knorm * max(np.linalg.norm(u), 1.0)
    if not np.isfinite(r) or r > bound:
        raise SolveError(f"linear solve residual {r:.3e} exceeds bound {bound:.3e}")
    return u


def _iterative_solve(K, F, tol):
    csc = K.tocsc()
    try:
        ilu = spilu(csc, drop_tol=1e-5, fill_factor=20.0)
        M = LinearOperator(K.shape, ilu.solve)
    except (MemoryError, RuntimeError):
        M = None
    u, info = gmres(K, F, M=M, rtol=tol, atol=0.0, restart=200, maxiter=400)
    if info != 0:
        raise SolveError(f"GMRES did not converge (info={info})")
    return u


def reaction_forces(system, u):
    """Reactions (K_unconstrained u - F_external) at the constrained DOFs.

    Returns the full-length vector; it is meaningful only at constrained
    entries (elsewhere it is the equilibrium residual, ~0).
    """
    return system.K @ u - system.F


def load_increment(K_eq, K_Ic, R_n, dR_max):
    """dR = min((K_Ic/K_eq - 1) R_n, dR_max): the linear-scaling step toward
    growth onset, capped by the schedule's maximum increment."""
    if K_eq <= 0.0:
        raise FractureError(f"load increment undefined for K_eq = {K_eq}")
    return min((K_Ic / K_eq - 1.0) * R_n, dR_max)


# ---------------------------------------------------------------------------
# Static convenience runs


@dataclass
class StaticResult:
    u: np.ndarray
    system: object
    classification: object
    families: dict
    reactions: np.ndarray
    load: float = 1.0


def solve_scenario_static(scenario, numerics=Numerics(), load=1.0):
    """Classify, build families, assemble, constrain, and solve one scenario
    at the given load scale."""
    mesh = scenario.mesh
    classification = classify_elements(mesh, scenario.crack, numerics.m_beta)
    families = build_families(mesh, classification, numerics.m_delta,
                              numerics.c, crack=scenario.crack)
    assembler = Assembler(mesh, scenario.material)
    system = assembler.assemble(classification, families, cache=False)
    bc = scenario.boundary(load)
    system.F = bc.F
    system = apply_dirichlet(system, bc.dofs, bc.values)
    u = solve_static(system, numerics.solver, numerics.solver_tol)
    return StaticResult(u=u, system=system, classification=classification,
                        families=families, reactions=reaction_forces(system, u),
                        load=load)


# ---------------------------------------------------------------------------
# Quasi-static propagation driver


def run_quasi_static(scenario, schedule, numerics=Numerics(), on_step=None):
    """Flowchart loop: solve, extract SIFs, grow or increment, repeat.

    History gets one row per step describing the critical tip (largest
    K_eq). Terminates on schedule limits or when a tip leaves the domain.
    """
    mesh, material = scenario.mesh, scenario.material
    if mesh.dim != 2:
        raise FractureError("crack propagation is 2-D only")
    if material.K_Ic <= 0.0:
        raise FractureError("propagation requires a positive K_Ic")

    crack = scenario.crack
    classification = classify_elements(mesh, crack, numerics.m_beta)
    families = build_families(mesh, classification, numerics.m_delta,
                              numerics.c, crack=crack)
    assembler = Assembler(mesh, material)
    d_c = numerics.alpha * mesh.delta_min
    R = schedule.R0
    state = SimulationState(u=None, load=R, crack=crack,
                            classification=classification, families=families,
                            step=0)

    for step in range(schedule.max_steps):
        system = assembler.assemble(classification, families)
        bc = scenario.boundary(R)
        system.F = bc.F
        system = apply_dirichlet(system, bc.dofs, bc.values)
        u = solve_static(system, numerics.solver, numerics.solver_tol)
        reactions = reaction_forces(system, u)
        reported = float(reactions[scenario.reaction_dofs].sum())

        sifs = {}
        for tip in crack.active_tips:
            sifs[tip] = sif_at_tip(mesh, classification, families, material,
                                   u, crack, tip, numerics.m_r)
        if not sifs:
            raise FractureError("no active crack tips to evaluate")
        crit = max(sifs, key=lambda t: sifs[t].K_eq)
        res = sifs[crit]
        grew = res.K_eq >= material.K_Ic
        pos = crack.tip_position(crit)
        state.history.append(HistoryRecord(
            step=step, load=R, tip_x=float(pos[0]), tip_y=float(pos[1]),
            K_I=res.K_I, K_II=res.K_II, K_eq=res.K_eq, theta_c=res.theta_c,
            reaction=reported, grew=grew,
        ))
        state.u, state.load, state.step = u, R, step
        state.crack, state.classification, state.families = crack, classification, families
        if on_step is not None:
            on_step(state)

        if schedule.max_crack_length and crack.total_length() >= schedule.max_crack_length:
            state.termination = "max_crack_length"
            break

        if grew:
            new_crack = crack
            front = back = 0
            for tip, r in sifs.items():
                if r.K_eq >= material.K_Ic:
                    new_crack = grow_crack(new_crack, tip, r.theta_c, d_c)
                    if tip == 0:
                        front += 1
                    else:
                        back += 1
            exited = [not scenario.contains(new_crack.tip_position(t))
                      for t in new_crack.active_tips]
            if any(exited):
                state.termination = "tip_left_domain"
                break
            classification = update_classification(classification, mesh, new_crack)
            new_nodes = [n for n in classification.pd_nodes if n not in families]
            families.update(build_families(mesh, classification, numerics.m_delta,
                                           numerics.c, crack=new_crack,
                                           owners=new_nodes))
            # Only the freshly added tip segments can break existing bonds.
            all_segs = new_crack.segments
            new_segs = np.concatenate([all_segs[:front], all_segs[len(all_segs) - back:]])
            changed = break_bonds(families, mesh, new_crack, segments=new_segs)
            assembler.invalidate_nodes(changed)
            crack = new_crack
        else:
            dR = load_increment(res.K_eq, material.K_Ic, R, schedule.dR_max)
            R_next = R + dR
            if schedule.max_load is not None and R_next > schedule.max_load * (1 + 1e-12):
                state.termination = "max_load"
                break
            R = R_next
    else:
        state.termination = "max_steps"

    state.crack, state.classification, state.families = crack, classification, families
    return state


class Stopwatch:
    """Tiny wall-clock helper for the benchmark report."""

    def __init__(self):
        self.t0 = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        dt = now - self.t0
        self.t0 = now
        return dt
