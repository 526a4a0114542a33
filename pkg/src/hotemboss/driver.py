"""Orchestration of the cooling and demolding phases.

Each step advances the temperature field first and then solves the mechanics
at the new temperatures. Cooling ends when the volume-averaged temperature
reaches the demolding temperature or the cooling duration elapses; the mold
then translates along its opening schedule for the demolding phase.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import contact as ct
from . import material as mat
from .config import SimulationConfig, load_mesh_and_card
from .linsolve import CgBreakdown, CgNotConverged
from .mechanics import (Constraint, MechanicalModel, MechanicalState, PicardNotConverged, PressureLoad,
                        recover_fields, shrinkage_report)
from .mesh import Mesh, geometry
from .thermal import (ConvectiveFace, PrescribedTemperature, TemperatureField, ThermalBc, assemble_thermal,
                      internal_energy, step_heat_input, thermal_step)
from .vtk import write_vtk

log = logging.getLogger(__name__)

CSV_COLUMNS = ("time_s", "Tmin_K", "Tmean_K", "Tmax_K", "max_vonmises_Pa", "demold_force_N", "picard_iters",
               "cg_iters")
PHASES = ("cooling", "demolding")
RETRYABLE = (PicardNotConverged, CgNotConverged, CgBreakdown)


class SimulationError(RuntimeError):
    """A module error with the phase and step at which it happened."""

    def __init__(self, phase: str, step: int, time: float, cause: Exception):
        self.phase, self.step, self.time, self.cause = phase, step, time, cause
        super().__init__(f"{phase} phase, step {step} (t = {time:.6g} s): {type(cause).__name__}: {cause}")


@dataclass
class StepRecord:
    step: int
    phase: str
    time_s: float
    dt_s: float
    Tmin_K: float
    Tmean_K: float
    Tmax_K: float
    max_vonmises_Pa: float
    demold_force_N: float
    picard_iters: int
    cg_iters: int
    contact_open: int = 0
    contact_stick: int = 0
    contact_slip: int = 0

    def csv_row(self) -> list[str]:
        return [repr(float(getattr(self, c))) if isinstance(getattr(self, c), float) else str(getattr(self, c))
                for c in CSV_COLUMNS]


@dataclass
class RunSummary:
    records: list[StepRecord] = field(default_factory=list)
    cooling_end_time: float | None = None
    shrinkage: dict = field(default_factory=dict)
    heat_extracted_J: float = 0.0
    heat_balance_J: float = 0.0
    status: str = "running"
    message: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "message": self.message,
            "n_steps": self.n_steps,
            "cooling_end_time_s": self.cooling_end_time,
            "heat_extracted_J": self.heat_extracted_J,
            "heat_balance_J": self.heat_balance_J,
            "shrinkage": self.shrinkage,
            "records": [asdict(r) for r in self.records],
        }


@dataclass
class RunState:
    """Everything needed to continue a run (what a checkpoint stores)."""

    phase: str
    step: int
    temperature: TemperatureField
    mech: MechanicalState
    cooling_end_time: float | None
    energy0: float
    heat_in: float
    records: list[StepRecord]


def config_digest(cfg: SimulationConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.source, sort_keys=True).encode()).hexdigest()


class Simulation:
    """Assembled problem for one configuration."""

    def __init__(self, cfg: SimulationConfig, mesh: Mesh | None = None, card: mat.MaterialCard | None = None,
                 output_dir=None):
        self.cfg = cfg
        if mesh is None or card is None:
            m, c = load_mesh_and_card(cfg)
            mesh = m if mesh is None else mesh
            card = c if card is None else card
        self.mesh, self.card = mesh, card
        self.output_dir = Path(output_dir) if output_dir is not None else cfg.output_dir
        self._vols = geometry(mesh)[1]

        bc = ThermalBc(
            [ConvectiveFace(c.facet_set, c.h, c.mold_temperature) for c in cfg.convective],
            [PrescribedTemperature(n, T) for n, T in cfg.prescribed],
        )
        self.thermal = assemble_thermal(mesh, card, bc, tol=cfg.thermal_tolerance, preconditioner=cfg.preconditioner)

        constraints = [Constraint(mesh.nodes_of(c.node_set), c.components, c.displacement, c.phases, c.node_set)
                       for c in cfg.constraints]
        pressure = None
        if cfg.initial_pressure != 0.0:
            name = cfg.pressure_facet_set or "mold_interface"
            pressure = PressureLoad(mesh.facet_sets[name], cfg.initial_pressure, ("cooling",))
        self.contact_set = None
        friction = None
        if cfg.contact is not None:
            c = cfg.contact
            surface = ct.RigidSurface([ct.primitive_from_dict(p) for p in c.primitives], c.opening_direction,
                                      c.opening)
            params = ct.ContactParams(c.normal_penalty, c.tangential_penalty, c.static_friction, c.dynamic_friction)
            self.contact_set = ct.ContactSet(mesh.nodes_of(c.node_set), surface, params)
            friction = c.friction
        export_dir = None
        if cfg.export_matrices and self.output_dir is not None:
            export_dir = self.output_dir / "matrices"
            export_dir.mkdir(parents=True, exist_ok=True)
        self.model = MechanicalModel(
            mesh, card, constraints, self.contact_set, cfg.body_force, pressure,
            picard_tol=cfg.picard_tolerance, max_picard=cfg.max_picard_iterations,
            preconditioner=cfg.preconditioner, friction=friction, export_dir=export_dir,
        )

    # -- state --------------------------------------------------------------------

    def initial_state(self) -> RunState:
        T0 = np.full(self.mesh.n_nodes, self.cfg.initial_temperature)
        closed = self.cfg.contact.initially_closed if self.cfg.contact is not None else True
        field_ = TemperatureField(T0, 0.0)
        return RunState("cooling", 0, field_, self.model.initial_state(T0, closed, "cooling"), None,
                        internal_energy(self.thermal, field_), 0.0, [])

    def mean_temperature(self, T: np.ndarray) -> float:
        return float(self._vols @ T[self.mesh.elements].mean(axis=1) / self._vols.sum())

    def _start_demolding(self, st: RunState) -> None:
        st.phase = "demolding"
        st.cooling_end_time = st.temperature.time
        if self.contact_set is not None:
            self.contact_set.surface.start_time = st.cooling_end_time

    def _next_dt(self, st: RunState) -> float | None:
        """Nominal step for the current phase, or ``None`` when the run is over."""
        cfg, t = self.cfg, st.temperature.time
        if st.phase == "cooling":
            tol = 1e-12 * max(cfg.cooling_duration, 1.0)
            trigger = cfg.demolding_temperature
            reached = trigger is not None and self.mean_temperature(st.temperature.values) <= trigger
            if t >= cfg.cooling_duration - tol or reached:
                self._start_demolding(st)
            else:
                return min(cfg.cooling_dt, cfg.cooling_duration - t)
        end = st.cooling_end_time + cfg.demolding_duration
        if t >= end - 1e-12 * max(end, 1.0):
            return None
        return min(cfg.demolding_dt, end - t)

    def advance(self, st: RunState, dt: float):
        """One coupled step of length ``dt``; returns the new state pieces and the mechanics result."""
        new_T, trep = thermal_step(st.temperature, dt, self.thermal)
        res = self.model.picard_step(st.mech, new_T.values, dt, st.phase)
        return new_T, trep, res

    def step(self, st: RunState) -> StepRecord | None:
        dt = self._next_dt(st)
        if dt is None:
            return None
        floor = min(self.cfg.dt_floor, dt)
        while True:
            try:
                new_T, trep, res = self.advance(st, dt)
                break
            except RETRYABLE as exc:
                if dt / 2.0 < floor:
                    raise SimulationError(st.phase, st.step + 1, st.temperature.time + dt, exc) from exc
                log.warning("step %d at t = %.6g s failed (%s); halving dt to %.3g s",
                            st.step + 1, st.temperature.time, exc, dt / 2.0)
                dt /= 2.0
            except Exception as exc:
                raise SimulationError(st.phase, st.step + 1, st.temperature.time + dt, exc) from exc

        st.heat_in += step_heat_input(self.thermal, st.temperature, new_T)
        st.temperature = new_T
        st.mech = self.model.commit(res)
        st.step += 1
        T = new_T.values
        force = 0.0
        counts = {"open": 0, "stick": 0, "slip": 0}
        if res.contact is not None:
            force = ct.demolding_force(res.contact, self.contact_set.surface.direction)
            counts = res.contact.counts()
        rec = StepRecord(
            step=st.step, phase=st.phase, time_s=float(new_T.time), dt_s=float(dt),
            Tmin_K=float(T.min()), Tmean_K=self.mean_temperature(T), Tmax_K=float(T.max()),
            max_vonmises_Pa=float(recover_fields(self.mesh, res.u, res.stress, res.strain)["von_mises"].max()),
            demold_force_N=force, picard_iters=res.picard_iterations, cg_iters=res.cg_iterations + trep.iterations,
            contact_open=counts["open"], contact_stick=counts["stick"], contact_slip=counts["slip"],
        )
        st.records.append(rec)
        return rec

    # -- output -------------------------------------------------------------------

    def fields(self, st: RunState) -> tuple[dict, dict, np.ndarray]:
        stress = self.model.stress_of(st.mech)
        rec = recover_fields(self.mesh, st.mech.u, stress, st.mech.points.strain, self.cfg.amplification)
        pts = st.mech.points
        point = {"temperature": st.temperature.values, "displacement": st.mech.u}
        cell = {k: v for k, v in rec.items() if k not in ("points", "displacement")}
        cell["fictive_temperature"] = pts.fictive_temperature
        cell["reduced_time"] = pts.reduced_time
        if st.mech.contact is not None:
            code = np.full(self.mesh.n_nodes, -1, dtype=np.int64)
            code[self.contact_set.nodes] = st.mech.contact.status
            point["contact_status"] = code
            cell["contact_status"] = code[self.mesh.elements].max(axis=1)
        wanted = self.cfg.fields
        if wanted is not None:
            keep = set(wanted) | {"temperature"}
            point = {k: v for k, v in point.items() if k in keep}
            cell = {k: v for k, v in cell.items() if k in keep}
        return point, cell, rec["points"]

    def write_snapshot(self, st: RunState) -> Path | None:
        if self.output_dir is None or not self.cfg.write_vtk:
            return None
        point, cell, coords = self.fields(st)
        title = f"hotemboss step {st.step} {st.phase} t={st.temperature.time!r}"
        return write_vtk(self.output_dir / f"step_{st.step:05d}.vtk", coords, self.mesh.elements, point, cell, title)

    # -- checkpoints ----------------------------------------------------------------

    def save_checkpoint(self, st: RunState, path) -> Path:
        path = Path(path)
        arrays = {
            "temperature": st.temperature.values, "u": st.mech.u,
            "scalars": np.array([st.temperature.time, st.mech.time, st.energy0, st.heat_in,
                                 np.nan if st.cooling_end_time is None else st.cooling_end_time]),
            "step": np.array(st.step), "phase": np.array(PHASES.index(st.phase)),
            "records": np.array(json.dumps([asdict(r) for r in st.records])),
            "digest": np.array(config_digest(self.cfg)),
        }
        arrays.update({f"pt_{k}": v for k, v in st.mech.points.arrays().items()})
        if st.mech.contact is not None:
            arrays.update({f"ct_{k}": v for k, v in st.mech.contact.__dict__.items()})
        tmp = path.with_name(path.name + ".tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        return path

    def load_checkpoint(self, path) -> RunState:
        with np.load(Path(path), allow_pickle=False) as z:
            if str(z["digest"]) != config_digest(self.cfg):
                raise ValueError(f"checkpoint {path} was written for a different configuration")
            t, t_mech, e0, q, t_end = (float(v) for v in z["scalars"])
            points = mat.PointState(**{k[3:]: z[k].copy() for k in z.files if k.startswith("pt_")})
            contact = None
            if any(k.startswith("ct_") for k in z.files):
                contact = ct.ContactNodeState(**{k[3:]: z[k].copy() for k in z.files if k.startswith("ct_")})
            T = z["temperature"].copy()
            mech = MechanicalState(z["u"].copy(), points, contact, T.copy(), t_mech)
            records = [StepRecord(**r) for r in json.loads(str(z["records"]))]
            st = RunState(PHASES[int(z["phase"])], int(z["step"]), TemperatureField(T, t), mech,
                          None if np.isnan(t_end) else t_end, e0, q, records)
        if st.cooling_end_time is not None and self.contact_set is not None:
            self.contact_set.surface.start_time = st.cooling_end_time
        return st

    # -- run ----------------------------------------------------------------------

    def run(self, checkpoint_every: int = 0, resume=None) -> RunSummary:
        out = self.output_dir
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        st = self.load_checkpoint(resume) if resume is not None else self.initial_state()
        summary = RunSummary(records=st.records, cooling_end_time=st.cooling_end_time)
        csv_fh = writer = None
        if out is not None:
            csv_fh = open(out / "summary.csv", "w", newline="")
            writer = csv.writer(csv_fh)
            writer.writerow(CSV_COLUMNS)
            for r in st.records:
                writer.writerow(r.csv_row())
            csv_fh.flush()
        if resume is None:
            self.write_snapshot(st)
        last_written = st.step
        try:
            while True:
                rec = self.step(st)
                if rec is None:
                    break
                if writer is not None:
                    writer.writerow(rec.csv_row())
                    csv_fh.flush()
                if st.step % self.cfg.output_every == 0:
                    self.write_snapshot(st)
                    last_written = st.step
                if out is not None and checkpoint_every and st.step % checkpoint_every == 0:
                    self.save_checkpoint(st, out / f"checkpoint_{st.step:05d}.npz")
            summary.status = "completed"
        except SimulationError as exc:
            summary.status = "failed"
            summary.message = str(exc)
            raise
        finally:
            summary.records = st.records
            summary.cooling_end_time = st.cooling_end_time
            if st.step != last_written:
                self.write_snapshot(st)
            summary.shrinkage = shrinkage_report(self.mesh, st.mech.u)
            summary.heat_extracted_J = -st.heat_in
            summary.heat_balance_J = abs(internal_energy(self.thermal, st.temperature) - st.energy0 - st.heat_in)
            if csv_fh is not None:
                csv_fh.close()
            if out is not None:
                with open(out / "summary.json", "w") as fh:
                    json.dump(summary.to_dict(), fh, indent=2)
        self.final_state = st
        return summary


def run(cfg: SimulationConfig, output_dir=None, checkpoint_every: int = 0, resume=None) -> RunSummary:
    """Run a configuration end to end and return its summary."""
    return Simulation(cfg, output_dir=output_dir).run(checkpoint_every=checkpoint_every, resume=resume)
