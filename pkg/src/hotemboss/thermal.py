"""Transient heat conduction with convective exchange to the mold.

Galerkin linear tetrahedra, lumped capacity, consistent Robin boundary terms,
and backward-Euler time stepping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linsolve import PatternAssembler, apply_constraints, cg_solve, make_preconditioner
from .material import MaterialCard
from .mesh import Mesh, facet_normals, geometry, oriented_facets


class Schedule:
    """Piecewise-linear function of time, held constant outside its knots."""

    def __init__(self, times, values):
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        self.values = np.atleast_1d(np.asarray(values, dtype=float))
        if self.times.shape != self.values.shape or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("schedule needs strictly increasing times matching its values")

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls([0.0], [value])

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    @property
    def minimum(self) -> float:
        return float(self.values.min())


@dataclass
class ConvectiveFace:
    facet_set: str
    h: float                  # W/(m^2 K)
    mold_temperature: Schedule


@dataclass
class PrescribedTemperature:
    node_set: str
    temperature: float        # K


@dataclass
class ThermalBc:
    convective: list[ConvectiveFace] = field(default_factory=list)
    prescribed: list[PrescribedTemperature] = field(default_factory=list)

    def __post_init__(self):
        for face in self.convective:
            if face.h < 0.0:
                raise ValueError(f"film coefficient on {face.facet_set!r} must be non-negative")


@dataclass
class TemperatureField:
    values: np.ndarray
    time: float = 0.0


@dataclass
class ThermalOperators:
    capacity: np.ndarray          # lumped diagonal, J/K
    conductivity: sp.csr_matrix   # W/K
    boundary: sp.csr_matrix       # W/K, Robin part
    bc: ThermalBc
    face_loads: list              # (node ids (F,3), per-node weight h*A/3) per convective face
    fixed_nodes: np.ndarray
    fixed_values: np.ndarray
    tol: float = 1e-12
    preconditioner: str = "ilu0"
    _cache: dict = field(default_factory=dict, repr=False)

    def load(self, t: float) -> np.ndarray:
        """Convective load vector ``b(t)`` in W."""
        b = np.zeros(self.capacity.size)
        for (facets, weight), face in zip(self.face_loads, self.bc.convective):
            np.add.at(b, facets.ravel(), np.repeat(weight * face.mold_temperature(t), 3))
        return b

    def system(self, dt: float):
        key = float(dt)
        if key not in self._cache:
            A = (sp.diags(self.capacity / dt) + self.conductivity + self.boundary).tocsr()
            A.sort_indices()
            A, _ = apply_constraints(A, np.zeros(A.shape[0]), self.fixed_nodes, self.fixed_values)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = (A, make_preconditioner(A, self.preconditioner))
        return self._cache[key]


def assemble_thermal(mesh: Mesh, card: MaterialCard, bc: ThermalBc, tol: float = 1e-12,
                     preconditioner: str = "ilu0") -> ThermalOperators:
    """Capacity, conduction, and Robin operators for the heat equation.

    The conduction matrix is ``k V grad(N_i).grad(N_j)`` per element; the
    capacity is lumped as ``rho c_p V / 4`` per element node; convective facets
    contribute ``h A (1 + delta_ij) / 12`` (exact for linear triangles).
    """
    grads, vols = geometry(mesh)
    n = mesh.n_nodes
    ke = card.conductivity * vols[:, None, None] * np.einsum("eia,eja->eij", grads, grads)
    K = PatternAssembler(mesh.elements, n).assemble(ke)
    cap = np.zeros(n)
    np.add.at(cap, mesh.elements.ravel(), np.repeat(card.density * card.heat_capacity * vols / 4.0, 4))

    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows, cols, vals, face_loads = [], [], [], []
    for face in bc.convective:
        if face.facet_set not in mesh.facet_sets:
            raise KeyError(f"thermal boundary references missing facet set {face.facet_set!r}")
        facets = oriented_facets(mesh, mesh.facet_sets[face.facet_set])
        _, area = facet_normals(mesh.nodes, facets)
        rows.append(np.repeat(facets, 3, axis=1).ravel())
        cols.append(np.tile(facets, (1, 3)).ravel())
        vals.append((face.h * area[:, None, None] * local).ravel())
        face_loads.append((facets, face.h * area / 3.0))
    if rows:
        H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        H = sp.csr_matrix((n, n))
    H.sum_duplicates()

    fixed, values = [], []
    for pt in bc.prescribed:
        ids = mesh.nodes_of(pt.node_set)
        fixed.append(ids)
        values.append(np.full(ids.size, pt.temperature))
    fixed_nodes = np.concatenate(fixed) if fixed else np.zeros(0, dtype=np.int64)
    fixed_values = np.concatenate(values) if values else np.zeros(0)
    return ThermalOperators(cap, K, H, bc, face_loads, fixed_nodes, fixed_values, tol, preconditioner)


def thermal_step(field: TemperatureField, dt: float, ops: ThermalOperators):
    """One backward-Euler step; returns ``(new field, SolveReport)``."""
    if not dt > 0.0:
        raise ValueError("thermal time step must be positive")
    t_new = field.time + dt
    A, M = ops.system(dt)
    rhs = ops.capacity / dt * field.values + ops.load(t_new)
    # Lifting for the fixed nodes mirrors apply_constraints on the cached matrix.
    if ops.fixed_nodes.size:
        full = (sp.diags(ops.capacity / dt) + ops.conductivity + ops.boundary).tocsr()
        lift = np.zeros_like(rhs)
        lift[ops.fixed_nodes] = ops.fixed_values
        rhs = rhs - full @ lift
        rhs[ops.fixed_nodes] = ops.fixed_values
    T, report = cg_solve(A, rhs, tol=ops.tol, preconditioner=M, x0=field.values)
    return TemperatureField(T, t_new), report


def internal_energy(ops: ThermalOperators, field: TemperatureField) -> float:
    return float(ops.capacity @ field.values)


def step_heat_input(ops: ThermalOperators, old: TemperatureField, new: TemperatureField) -> float:
    """Heat (J) entering the body over one backward-Euler step.

    Includes the convective exchange and, for nodes with prescribed
    temperature, the reaction flux needed to hold them.
    """
    dt = new.time - old.time
    convective = dt * float(np.sum(ops.load(new.time) - ops.boundary @ new.values))
    if ops.fixed_nodes.size == 0:
        return convective
    residual = (ops.capacity / dt * (new.values - old.values) + ops.conductivity @ new.values
                + ops.boundary @ new.values - ops.load(new.time))
    return convective + dt * float(residual[ops.fixed_nodes].sum())


def heat_balance(history: list[TemperatureField], ops: ThermalOperators) -> float:
    """``|change of internal energy - time-integrated boundary heat input|`` in J."""
    if len(history) < 2:
        return 0.0
    dE = internal_energy(ops, history[-1]) - internal_energy(ops, history[0])
    Q = sum(step_heat_input(ops, a, b) for a, b in zip(history[:-1], history[1:]))
    return abs(dE - Q)


def temperature_gradients(mesh: Mesh, T: np.ndarray) -> np.ndarray:
    """Element-constant temperature gradient ``(E, 3)`` in K/m."""
    grads, _ = geometry(mesh)
    return np.einsum("eia,ei->ea", grads, T[mesh.elements])


def volume_average(mesh: Mesh, values: np.ndarray, vols: np.ndarray | None = None) -> float:
    if vols is None:
        _, vols = geometry(mesh)
    return float(vols @ values[mesh.elements].mean(axis=1) / vols.sum())
