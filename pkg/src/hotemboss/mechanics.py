"""Quasi-static small-strain equilibrium of the viscoelastic part.

Each time step solves for the displacement increment with the temperature
field already advanced (one-way thermal to mechanical coupling). Within a step
the viscoelastic law is linear in the strain increment, so the Picard sweeps
only iterate on the contact active set, the normal-penalty linearization and
the secant stiffness of slipping nodes.

Voigt order is ``(xx, yy, zz, yz, xz, xy)``; strains in the B-matrix use
engineering shear, stored strains use tensor shear.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import material as mat
from .contact import OPEN, SLIP, ContactNodeState, ContactSet
from .linsolve import PatternAssembler, apply_constraints, cg_solve, export_matrix_market, make_preconditioner
from .mesh import Mesh, facet_normals, geometry, oriented_facets
from .thermal import Schedule

log = logging.getLogger(__name__)

ENGINEERING = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
OMEGA_MIN = 0.05


class MechanicsError(RuntimeError):
    pass


class SingularConstraintError(MechanicsError):
    """Constraints and closed contacts leave a rigid-body mode free."""


class PicardNotConverged(MechanicsError):
    pass


@dataclass
class Constraint:
    """Fixed displacement components on a node set.

    ``value`` (a schedule of total displacement in m) may prescribe motion;
    without it the components are held at their position when the constraint
    becomes active. ``phases`` limits the constraint to named phases.
    """

    nodes: np.ndarray
    components: tuple[int, ...]
    value: Schedule | None = None
    phases: tuple[str, ...] | None = None
    name: str = ""

    def active(self, phase: str) -> bool:
        return self.phases is None or phase in self.phases


@dataclass
class PressureLoad:
    facets: np.ndarray
    pressure: float
    phases: tuple[str, ...] | None = ("cooling",)


@dataclass
class MechanicalState:
    u: np.ndarray
    points: mat.PointState
    contact: ContactNodeState | None
    temperature: np.ndarray
    time: float = 0.0

    def copy(self) -> "MechanicalState":
        return MechanicalState(self.u.copy(), self.points.copy(),
                               None if self.contact is None else self.contact.copy(),
                               self.temperature.copy(), self.time)


@dataclass
class StepResult:
    u: np.ndarray
    stress: np.ndarray            # (E, 6) Voigt
    strain: np.ndarray            # (E, 6) tensor shear
    points: mat.PointState
    contact: ContactNodeState | None
    temperature: np.ndarray
    time: float
    picard_iterations: int
    cg_iterations: int
    residual_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def contact_summary(self) -> dict[str, int]:
        return {} if self.contact is None else self.contact.counts()


def b_matrices(grads: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices ``(E, 6, 12)`` with engineering shear."""
    E = grads.shape[0]
    B = np.zeros((E, 6, 12))
    for i in range(4):
        gx, gy, gz = grads[:, i, 0], grads[:, i, 1], grads[:, i, 2]
        c = 3 * i
        B[:, 0, c] = gx
        B[:, 1, c + 1] = gy
        B[:, 2, c + 2] = gz
        B[:, 3, c + 1], B[:, 3, c + 2] = gz, gy
        B[:, 4, c], B[:, 4, c + 2] = gz, gx
        B[:, 5, c], B[:, 5, c + 1] = gy, gx
    return B


def tangent_matrix(g1, g2) -> np.ndarray:
    """Voigt stiffness ``(E, 6, 6)`` from incremental moduli.

    ``g1`` relates deviatoric stress to deviatoric strain (twice the shear
    modulus), ``g2`` spherical stress to spherical strain (three times the bulk
    modulus).
    """
    g1 = np.atleast_1d(g1)
    g2 = np.atleast_1d(g2)
    C = np.zeros((g1.size, 6, 6))
    C[:, :3, :3] = (g2 / 3.0 - g1 / 3.0)[:, None, None]
    idx = np.arange(3)
    C[:, idx, idx] += g1[:, None]
    C[:, idx + 3, idx + 3] = g1[:, None] / 2.0
    return C


def von_mises(stress: np.ndarray) -> np.ndarray:
    s = stress
    return np.sqrt(0.5 * ((s[:, 0] - s[:, 1]) ** 2 + (s[:, 1] - s[:, 2]) ** 2 + (s[:, 2] - s[:, 0]) ** 2)
                   + 3.0 * (s[:, 3] ** 2 + s[:, 4] ** 2 + s[:, 5] ** 2))


def rigid_body_modes(nodes: np.ndarray) -> np.ndarray:
    c = nodes - nodes.mean(axis=0)
    n = nodes.shape[0]
    R = np.zeros((3 * n, 6))
    for a in range(3):
        R[a::3, a] = 1.0
    x, y, z = c[:, 0], c[:, 1], c[:, 2]
    R[1::3, 3], R[2::3, 3] = -z, y
    R[0::3, 4], R[2::3, 4] = z, -x
    R[0::3, 5], R[1::3, 5] = -y, x
    return R


class MechanicalModel:
    """Assembly and Picard solution of the mechanical step."""

    def __init__(self, mesh: Mesh, card: mat.MaterialCard, constraints: list[Constraint] | None = None,
                 contact: ContactSet | None = None, body_force=(0.0, 0.0, 0.0),
                 pressure: PressureLoad | None = None, picard_tol: float = 1e-6, max_picard: int = 50,
                 preconditioner: str = "ilu0", cg_max_iter: int | None = None,
                 friction: dict[str, bool] | None = None, export_dir=None):
        self.mesh = mesh
        self.card = card
        self.constraints = list(constraints or [])
        self.contact = contact
        self.body_force = np.asarray(body_force, dtype=float)
        self.pressure = pressure
        self.picard_tol = picard_tol
        self.max_picard = max_picard
        self.linear_tol = 0.01 * picard_tol
        self.preconditioner = preconditioner
        self.cg_max_iter = cg_max_iter
        self.friction = {"cooling": True, "demolding": True} if friction is None else dict(friction)
        self.export_dir = export_dir
        self._exports = 0

        self.grads, self.vols = geometry(mesh)
        self.B = b_matrices(self.grads)
        self._Bt = np.ascontiguousarray(self.B.transpose(0, 2, 1))
        self.n_dofs = 3 * mesh.n_nodes
        self.edofs = (3 * mesh.elements[:, :, None] + np.arange(3)).reshape(-1, 12)
        self.assembler = PatternAssembler(self.edofs, self.n_dofs)
        if contact is not None:
            cd = (3 * contact.nodes[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
            self._contact_pos = self.assembler.positions(cd.ravel(), np.transpose(cd, (0, 2, 1)).ravel())
            self._contact_dofs = (3 * contact.nodes[:, None] + np.arange(3)).ravel()
        self._body_load = self._nodal_body_load()

    # -- state -------------------------------------------------------------------

    def initial_state(self, T0: np.ndarray, closed_contact: bool = True, phase: str = "cooling") -> MechanicalState:
        T0 = np.asarray(T0, dtype=float)
        Te = T0[self.mesh.elements].mean(axis=1)
        points = mat.PointState.initial(self.mesh.n_elements, self.card, Te)
        cst = None
        if self.contact is not None:
            cst = self.contact.initial_state(self.mesh.nodes, 0.0, closed_contact, self.friction.get(phase, True))
        return MechanicalState(np.zeros((self.mesh.n_nodes, 3)), points, cst, T0.copy(), 0.0)

    # -- loads and constraints -----------------------------------------------------

    def _nodal_body_load(self) -> np.ndarray:
        f = np.zeros((self.mesh.n_nodes, 3))
        if np.any(self.body_force):
            np.add.at(f, self.mesh.elements.ravel(), np.repeat(self.vols / 4.0, 4)[:, None] * self.body_force)
        return f.ravel()

    def external_load(self, phase: str) -> np.ndarray:
        f = self._body_load.copy()
        pl = self.pressure
        if pl is not None and pl.pressure != 0.0 and (pl.phases is None or phase in pl.phases):
            facets = oriented_facets(self.mesh, pl.facets)
            n, area = facet_normals(self.mesh.nodes, facets)
            traction = -pl.pressure * n * (area / 3.0)[:, None]
            fn = np.zeros((self.mesh.n_nodes, 3))
            for k in range(3):
                np.add.at(fn, facets[:, k], traction)
            f += fn.ravel()
        return f

    def constrained_dofs(self, phase: str, u_old: np.ndarray, t_new: float):
        """Constrained DOF ids and their prescribed increments for the step."""
        dofs, incs = [], []
        for c in self.constraints:
            if not c.active(phase):
                continue
            for comp in c.components:
                d = 3 * c.nodes + comp
                dofs.append(d)
                if c.value is None:
                    incs.append(np.zeros(d.size))
                else:
                    incs.append(c.value(t_new) - u_old.ravel()[d])
        if not dofs:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        dofs = np.concatenate(dofs)
        incs = np.concatenate(incs)
        uniq, first = np.unique(dofs, return_index=True)
        return uniq, incs[first]

    def _check_rigid_modes(self, fixed: np.ndarray, contact_K: np.ndarray | None, status) -> None:
        R = rigid_body_modes(self.mesh.nodes)
        G = R[fixed].T @ R[fixed]
        if contact_K is not None:
            closed = status != OPEN
            idx = self._contact_dofs.reshape(-1, 3)[closed]
            Rc = R[idx]                                   # (n, 3, 6)
            G = G + np.einsum("nia,nij,njb->ab", Rc, contact_K[closed], Rc) / max(
                self.contact.params.normal_penalty, 1.0)
        w = np.linalg.eigvalsh(0.5 * (G + G.T))
        if w[0] <= 1e-10 * max(w[-1], 1e-300):
            raise SingularConstraintError(
                "constraints and closed contacts do not remove all rigid-body modes "
                f"(smallest restraint eigenvalue {w[0]:.3e})"
            )

    # -- assembly ------------------------------------------------------------------

    def element_temperatures(self, T_nodal: np.ndarray) -> np.ndarray:
        return np.asarray(T_nodal, dtype=float)[self.mesh.elements].mean(axis=1)

    def thermal_increment(self, points: mat.PointState, T_new_el: np.ndarray, dt: float):
        """Reduced-time increment, fictive temperature and thermal strain for the step."""
        d_xi = mat.reduced_time_increment(points.last_temperature, T_new_el, dt, self.card.shift)
        tf, q = mat.update_fictive_temperature(points, T_new_el, d_xi, self.card)
        eth = mat.thermal_strain(T_new_el, tf, points.initial_temperature, self.card)
        return d_xi, tf, q, eth - points.thermal_strain

    def assemble_mechanical(self, points: mat.PointState, d_xi: np.ndarray, d_eth: np.ndarray,
                            contact_K=None, contact_rhs=None, phase: str = "cooling"):
        """Tangent matrix and right-hand side for the displacement increment.

        Returns ``(A, r, C, sigma_tilde)``; ``sigma_tilde`` is the stress the
        elements would carry with zero strain increment.
        """
        g1, g2 = mat.effective_moduli(d_xi, self.card)
        C = tangent_matrix(g1, g2)
        s_dev, s_sph = mat.history_stress(points, d_xi, self.card)
        sigma_tilde = s_dev + (s_sph - g2 * d_eth)[:, None] * mat.IDENTITY6
        Ke = self.vols[:, None, None] * (self._Bt @ (C @ self.B))
        fe = self.vols[:, None] * (self._Bt @ sigma_tilde[:, :, None])[:, :, 0]
        r = self.external_load(phase)
        np.add.at(r, self.edofs.ravel(), -fe.ravel())
        if contact_K is not None:
            A = self.assembler.assemble(Ke, self._contact_pos, contact_K.ravel())
            np.add.at(r, self._contact_dofs, contact_rhs.ravel())
        else:
            A = self.assembler.assemble(Ke)
        return A, r, C, sigma_tilde

    # -- step ----------------------------------------------------------------------

    def picard_step(self, state: MechanicalState, T_new: np.ndarray, dt: float, phase: str = "cooling") -> StepResult:
        """Advance the mechanics over ``dt`` with the new nodal temperatures.

        The input state is not modified; call :meth:`commit` with the result.
        """
        if not dt > 0.0:
            raise ValueError("time step must be positive")
        t_new = state.time + dt
        T_el = self.element_temperatures(T_new)
        d_xi, tf, q, d_eth = self.thermal_increment(state.points, T_el, dt)
        fixed, fixed_inc = self.constrained_dofs(phase, state.u, t_new)
        friction = self.friction.get(phase, True)
        x_ref = self.mesh.nodes + state.u

        cst = state.contact
        cs = self.contact
        status = None if cst is None else cst.status.copy()
        anchor = None if cst is None else cst.anchor.copy()
        start_status = None if cst is None else cst.status.copy()
        start_anchor = anchor
        slip_k = None if cst is None else cs.slip_stiffness(cst, friction)
        if cst is not None and not friction:
            status[status != OPEN] = SLIP

        du = np.zeros(self.n_dofs)
        du[fixed] = fixed_inc
        history, cg_total = [], 0
        prev_resid, omega = None, 1.0
        trial = None
        # The preconditioner is rebuilt only when the contact status set changes.
        precond, precond_key = None, None
        for sweep in range(1, self.max_picard + 1):
            x_iter = x_ref + du.reshape(-1, 3)
            cK = crhs = None
            if cs is not None:
                cK, crhs = cs.linearize(x_iter[cs.nodes], x_ref[cs.nodes], t_new, status, anchor, slip_k)
            if sweep == 1:
                self._check_rigid_modes(fixed, cK, status)
            A, r, C, sigma_tilde = self.assemble_mechanical(state.points, d_xi, d_eth, cK, crhs, phase)
            A, r = apply_constraints(A, r, fixed, fixed_inc)
            if self.export_dir is not None:
                export_matrix_market(f"{self.export_dir}/system_{self._exports:05d}.mtx", A, r)
                self._exports += 1
            key = None if status is None else status.tobytes()
            if precond is None or key != precond_key:
                precond, precond_key = make_preconditioner(A, self.preconditioner), key
            du_new, rep = cg_solve(A, r, tol=self.linear_tol, preconditioner=precond,
                                   x0=du, max_iter=self.cg_max_iter)
            cg_total += rep.iterations
            u_new = state.u.ravel() + du_new
            change = np.linalg.norm(du_new - du)
            scale = np.linalg.norm(u_new)
            rel = change / scale if scale > 0.0 else (0.0 if change == 0.0 else np.inf)
            history.append(float(rel))
            resid = du_new - du
            if friction and cs is not None and prev_resid is not None:
                # Aitken relaxation damps the stick/slip feedback between the
                # friction cap and the normal force.
                d = resid - prev_resid
                dd = d @ d
                if dd > 0.0:
                    omega = min(max(-omega * (prev_resid @ d) / dd, OMEGA_MIN), 1.0)
            prev_resid = resid
            du = du + omega * resid
            if cs is None:
                if sweep > 1 and rel <= self.picard_tol:
                    break
                continue
            x_new = x_ref + du.reshape(-1, 3)
            trial = cs.evaluate(x_new[cs.nodes], t_new, status, start_anchor, friction, start_status)
            same = np.array_equal(trial.status, status)
            log.debug("sweep %d: rel %.3e, omega %.3f, status %s", sweep, rel, omega, trial.counts())
            if sweep > 1 and same and rel <= self.picard_tol:
                break
            status = trial.status
            anchor = trial.anchor
            slip_k = cs.slip_stiffness(trial, friction)
        else:
            raise PicardNotConverged(
                f"Picard iteration did not converge in {self.max_picard} sweeps at t = {t_new:.6g} s "
                f"(last relative change {history[-1]:.3e})"
            )

        du_e = du[self.edofs]
        d_eps = np.einsum("eaj,ej->ea", self.B, du_e) / ENGINEERING
        d_sph = mat.spherical(d_eps)
        d_dev = mat.deviator(d_eps)
        s_dev, s_sph, pts = mat.stress_update(state.points, d_dev, d_sph, d_eth, d_xi, self.card)
        pts = replace(pts, fictive_temperature=tf, fict_internal=q, last_temperature=T_el)
        stress = s_dev + s_sph[:, None] * mat.IDENTITY6
        contact_state = None
        if cs is not None:
            contact_state = cs.relocate_anchors(trial, t_new)
        return StepResult(
            u=(state.u.ravel() + du).reshape(-1, 3), stress=stress, strain=pts.strain.copy(), points=pts,
            contact=contact_state, temperature=np.asarray(T_new, dtype=float).copy(), time=t_new,
            picard_iterations=sweep, cg_iterations=cg_total, residual_history=history,
        )

    @staticmethod
    def commit(result: StepResult) -> MechanicalState:
        return MechanicalState(result.u.copy(), result.points.copy(),
                               None if result.contact is None else result.contact.copy(),
                               result.temperature.copy(), result.time)

    # -- post-processing -------------------------------------------------------------

    def stress_of(self, state: MechanicalState) -> np.ndarray:
        s_dev, s_sph = state.points.stress(self.card)
        return s_dev + s_sph[:, None] * mat.IDENTITY6

    def internal_force(self, stress: np.ndarray) -> np.ndarray:
        fe = self.vols[:, None] * np.einsum("eai,ea->ei", self.B, stress)
        f = np.zeros(self.n_dofs)
        np.add.at(f, self.edofs.ravel(), fe.ravel())
        return f

    def contact_force_vector(self, cst: ContactNodeState | None) -> np.ndarray:
        f = np.zeros(self.n_dofs)
        if cst is not None:
            closed = cst.status != OPEN
            forces = np.where(closed[:, None], cst.polymer_forces(), 0.0)
            np.add.at(f, self._contact_dofs, forces.ravel())
        return f


def recover_fields(mesh: Mesh, u: np.ndarray, stress: np.ndarray | None = None, strain: np.ndarray | None = None,
                   amplification: float = 1.0) -> dict:
    """Deformed coordinates ``X + amplification * u`` plus element fields by name."""
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    out = {"points": mesh.nodes + amplification * u, "displacement": u}
    if strain is None:
        grads, _ = geometry(mesh)
        eng = np.einsum("eaj,ej->ea", b_matrices(grads), u[mesh.elements].reshape(-1, 12))
        strain = eng / ENGINEERING
    names = ("xx", "yy", "zz", "yz", "xz", "xy")
    for k, n in enumerate(names):
        out[f"eps_{n}"] = strain[:, k]
    if stress is not None:
        for k, n in enumerate(names):
            out[f"s_{n}"] = stress[:, k]
        out["von_mises"] = von_mises(stress)
        out["pressure"] = -stress[:, :3].mean(axis=1)
    return out


def shrinkage_report(mesh: Mesh, u: np.ndarray, feature_prefix: str = "feature_") -> dict:
    """Bounding-box strain per axis and feature offsets relative to the part center.

    Feature offsets are the mean displacement of each ``feature_*`` node set
    minus the displacement of the bounding-box center.
    """
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    x0 = mesh.nodes
    x1 = x0 + u
    ext0 = x0.max(axis=0) - x0.min(axis=0)
    ext1 = x1.max(axis=0) - x1.min(axis=0)
    shrink = np.divide(ext1 - ext0, ext0, out=np.zeros(3), where=ext0 > 0)
    center_shift = 0.5 * (x1.max(axis=0) + x1.min(axis=0)) - 0.5 * (x0.max(axis=0) + x0.min(axis=0))
    offsets = {
        name: (u[ids].mean(axis=0) - center_shift).tolist()
        for name, ids in sorted(mesh.node_sets.items()) if name.startswith(feature_prefix) and ids.size
    }
    return {"shrinkage": shrink.tolist(), "feature_offsets_m": offsets}
