"""Simulation configuration: JSON ingestion, validation and unit resolution.

A configuration is one JSON document (schema ``schemas/config.schema.json``).
:func:`validate_config` never raises for content problems; it returns a list of
:class:`Diagnostic` records. :func:`load_config` refuses documents with any
error-level diagnostic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .material import MaterialCard, MaterialCardError, load_material_card, load_schema
from .mesh import Mesh, MeshError, load_mesh
from .thermal import Schedule

KELVIN_OFFSET = 273.15
AXES = {"x": 0, "y": 1, "z": 2}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        msgs = "; ".join(str(d) for d in self.diagnostics if d.level == "error")
        super().__init__(f"invalid configuration: {msgs}")


@dataclass(frozen=True)
class Diagnostic:
    level: str          # "error" or "warning"
    path: str           # JSON pointer-like location
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.path}: {self.message}"


@dataclass
class ConvectiveSpec:
    facet_set: str
    h: float
    mold_temperature: Schedule


@dataclass
class ConstraintSpec:
    node_set: str
    components: tuple[int, ...]
    phases: tuple[str, ...] | None
    displacement: Schedule | None


@dataclass
class ContactSpec:
    node_set: str
    normal_penalty: float
    tangential_penalty: float
    static_friction: float
    dynamic_friction: float
    friction: dict[str, bool]
    initially_closed: bool
    primitives: list[dict]
    opening_direction: np.ndarray
    opening: Schedule


@dataclass
class SimulationConfig:
    """Resolved configuration: kelvin, SI units, absolute paths."""

    mesh_path: Path
    material_card_path: Path
    initial_temperature: float
    convective: list[ConvectiveSpec]
    prescribed: list[tuple[str, float]]
    constraints: list[ConstraintSpec]
    body_force: np.ndarray
    initial_pressure: float
    pressure_facet_set: str | None
    contact: ContactSpec | None
    cooling_duration: float
    cooling_dt: float
    demolding_temperature: float | None
    demolding_duration: float
    demolding_dt: float
    picard_tolerance: float = 1e-6
    max_picard_iterations: int = 50
    thermal_tolerance: float = 1e-12
    preconditioner: str = "ilu0"
    min_dt: float | None = None
    export_matrices: bool = False
    output_dir: Path | None = None
    output_every: int = 1
    amplification: float = 1.0
    write_vtk: bool = True
    fields: list[str] | None = None
    source: dict = field(default_factory=dict, repr=False)

    @property
    def dt_floor(self) -> float:
        return self.min_dt if self.min_dt is not None else self.cooling_dt / 64.0


def _temperature(doc: dict, base: str):
    """Kelvin value of ``base_K`` or ``base_C`` in ``doc``, or ``None``."""
    if f"{base}_K" in doc:
        return float(doc[f"{base}_K"])
    if f"{base}_C" in doc:
        return float(doc[f"{base}_C"]) + KELVIN_OFFSET
    return None


def _temperature_schedule(doc: dict) -> Schedule:
    if "temperatures_K" in doc:
        values = np.asarray(doc["temperatures_K"], dtype=float)
    else:
        values = np.asarray(doc["temperatures_C"], dtype=float) + KELVIN_OFFSET
    return Schedule(doc["times_s"], values)


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else (base / path)


def validate_config(doc: dict, base_dir=".", check_files: bool = True) -> list[Diagnostic]:
    """Check a parsed configuration document and return every problem found."""
    import jsonschema

    base = Path(base_dir)
    diags: list[Diagnostic] = []

    def err(path, msg):
        diags.append(Diagnostic("error", path, msg))

    def warn(path, msg):
        diags.append(Diagnostic("warning", path, msg))

    validator = jsonschema.Draft202012Validator(load_schema("config.schema.json"))
    schema_errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    for e in schema_errors:
        err("/" + "/".join(str(p) for p in e.absolute_path), e.message)
    if schema_errors:
        return diags

    # -- temperatures -------------------------------------------------------
    def one_temperature(d: dict, base_key: str, where: str, required: bool):
        both = f"{base_key}_K" in d and f"{base_key}_C" in d
        if both:
            err(where, f"give only one of {base_key}_K and {base_key}_C")
        value = _temperature(d, base_key)
        if value is None and required:
            err(where, f"missing {base_key}_K or {base_key}_C")
        if value is not None and value <= 0.0:
            err(where, f"{base_key} must be above absolute zero, got {value} K")
        return value

    T0 = one_temperature(doc, "initial_temperature", "/initial_temperature", True)

    # -- phases ---------------------------------------------------------------
    cooling = doc["phases"]["cooling"]
    if cooling["dt_s"] <= 0.0:
        err("/phases/cooling/dt_s", "time step must be positive")
    if cooling["duration_s"] < 0.0:
        err("/phases/cooling/duration_s", "duration must be non-negative")
    T_dm = one_temperature(cooling, "demolding_temperature", "/phases/cooling", False)
    if T_dm is not None and T0 is not None and not T_dm < T0:
        err("/phases/cooling/demolding_temperature", f"demolding temperature {T_dm} K must be below the initial temperature {T0} K")
    demold = doc["phases"].get("demolding")
    if demold is not None:
        if demold["dt_s"] <= 0.0:
            err("/phases/demolding/dt_s", "time step must be positive")
        if demold["duration_s"] < 0.0:
            err("/phases/demolding/duration_s", "duration must be non-negative")

    # -- thermal --------------------------------------------------------------
    conv = doc["thermal"].get("convective", [])
    mold_min = []
    for i, face in enumerate(conv):
        where = f"/thermal/convective/{i}"
        if face["h_W_m2K"] < 0.0:
            err(where + "/h_W_m2K", "film coefficient must be non-negative")
        n_given = sum(k in face for k in ("mold_temperature_K", "mold_temperature_C", "mold_temperature_schedule"))
        if n_given != 1:
            err(where, "give exactly one of mold_temperature_K, mold_temperature_C, mold_temperature_schedule")
            continue
        if "mold_temperature_schedule" in face:
            s = face["mold_temperature_schedule"]
            n_vals = sum(k in s for k in ("temperatures_K", "temperatures_C"))
            if n_vals != 1:
                err(where + "/mold_temperature_schedule", "give exactly one of temperatures_K and temperatures_C")
                continue
            try:
                mold_min.append(_temperature_schedule(s).minimum)
            except ValueError as exc:
                err(where + "/mold_temperature_schedule", str(exc))
        else:
            mold_min.append(_temperature(face, "mold_temperature"))
    if not conv or all(f["h_W_m2K"] == 0.0 for f in conv):
        warn("/thermal/convective", "no convective exchange (h = 0 everywhere): the part will not cool")
    for i, pt in enumerate(doc["thermal"].get("prescribed", [])):
        one_temperature(pt, "temperature", f"/thermal/prescribed/{i}", True)

    # -- contact --------------------------------------------------------------
    contact = doc.get("contact")
    if contact is not None:
        if contact["normal_penalty_N_m"] <= 0.0:
            err("/contact/normal_penalty_N_m", "normal penalty must be positive")
        if contact["tangential_penalty_N_m"] <= 0.0:
            err("/contact/tangential_penalty_N_m", "tangential penalty must be positive")
        mu_s = contact.get("static_friction", 0.0)
        mu_d = contact.get("dynamic_friction", mu_s)
        if mu_s < 0.0 or mu_d < 0.0:
            err("/contact", "friction coefficients must be non-negative")
        if mu_d > mu_s:
            err("/contact/dynamic_friction",
                f"Coulomb friction requires dynamic <= static coefficient (mu_d <= mu_s); got mu_d = {mu_d} > mu_s = {mu_s}")
        for i, prim in enumerate(contact["primitives"]):
            if prim["type"] == "half_space" and np.linalg.norm(prim["normal"]) == 0.0:
                err(f"/contact/primitives/{i}/normal", "normal must be non-zero")
            if prim["type"] == "box" and np.any(np.asarray(prim["max_m"]) <= np.asarray(prim["min_m"])):
                err(f"/contact/primitives/{i}", "box max_m must exceed min_m on every axis")
        if "opening_direction" in contact and np.linalg.norm(contact["opening_direction"]) == 0.0:
            err("/contact/opening_direction", "opening direction must be non-zero")
        if "opening_schedule" in contact:
            s = contact["opening_schedule"]
            if len(s["times_s"]) != len(s["displacements_m"]) or np.any(np.diff(s["times_s"]) <= 0.0):
                err("/contact/opening_schedule", "times must increase strictly and match the displacements")

    for i, c in enumerate(doc.get("mechanics", {}).get("constraints", [])):
        if "displacement_schedule" in c:
            s = c["displacement_schedule"]
            if len(s["times_s"]) != len(s["displacements_m"]) or np.any(np.diff(s["times_s"]) <= 0.0):
                err(f"/mechanics/constraints/{i}/displacement_schedule",
                    "times must increase strictly and match the displacements")

    solver = doc.get("solver", {})
    for key in ("picard_tolerance", "thermal_tolerance", "min_dt_s"):
        if key in solver and solver[key] <= 0.0:
            err(f"/solver/{key}", "must be positive")
    if solver.get("max_picard_iterations", 1) < 1:
        err("/solver/max_picard_iterations", "must be at least 1")
    out = doc.get("output", {})
    if out.get("every_n_steps", 1) < 1:
        err("/output/every_n_steps", "must be at least 1")

    # -- files and sets -----------------------------------------------------
    if not check_files:
        return diags
    mesh = card = None
    mesh_path = _resolve(base, doc["mesh_path"])
    if not mesh_path.is_file():
        err("/mesh_path", f"mesh file not found: {mesh_path}")
    else:
        try:
            mesh = load_mesh(mesh_path)
        except (MeshError, OSError) as exc:
            err("/mesh_path", str(exc))
    card_path = _resolve(base, doc["material_card_path"])
    if not card_path.is_file():
        err("/material_card_path", f"material card not found: {card_path}")
    else:
        try:
            card = load_material_card(card_path)
        except (MaterialCardError, OSError, ValueError) as exc:
            err("/material_card_path", str(exc))

    if mesh is not None:
        _check_sets(doc, mesh, err)
    if card is not None:
        pole = card.shift.lowest_valid_temperature
        lows = [v for v in mold_min if v is not None]
        if lows and min(lows) <= pole:
            warn("/thermal/convective",
                 f"mold temperature {min(lows):.2f} K is at or below the shift-function pole {pole:.2f} K; "
                 "the run fails if any element cools that far")
        if T_dm is not None and T_dm <= pole:
            err("/phases/cooling/demolding_temperature",
                f"demolding temperature {T_dm:.2f} K is at or below the shift-function pole {pole:.2f} K")
    return diags


def _check_sets(doc: dict, mesh: Mesh, err) -> None:
    for i, face in enumerate(doc["thermal"].get("convective", [])):
        if face["facet_set"] not in mesh.facet_sets:
            err(f"/thermal/convective/{i}/facet_set", f"mesh has no facet set {face['facet_set']!r}")
    for i, pt in enumerate(doc["thermal"].get("prescribed", [])):
        if pt["node_set"] not in mesh.node_sets:
            err(f"/thermal/prescribed/{i}/node_set", f"mesh has no node set {pt['node_set']!r}")
    mech = doc.get("mechanics", {})
    for i, c in enumerate(mech.get("constraints", [])):
        if c["node_set"] not in mesh.node_sets:
            err(f"/mechanics/constraints/{i}/node_set", f"mesh has no node set {c['node_set']!r}")
    ps = mech.get("pressure_facet_set")
    if ps is not None and ps not in mesh.facet_sets:
        err("/mechanics/pressure_facet_set", f"mesh has no facet set {ps!r}")
    contact = doc.get("contact")
    if contact is not None and contact["node_set"] not in mesh.node_sets:
        err("/contact/node_set", f"mesh has no node set {contact['node_set']!r}")


def config_from_dict(doc: dict, base_dir=".", check_files: bool = True) -> SimulationConfig:
    """Validate and resolve a configuration document; raise :class:`ConfigError` on errors."""
    diags = validate_config(doc, base_dir, check_files)
    if any(d.level == "error" for d in diags):
        raise ConfigError(diags)
    base = Path(base_dir)

    convective = []
    for face in doc["thermal"].get("convective", []):
        if "mold_temperature_schedule" in face:
            sched = _temperature_schedule(face["mold_temperature_schedule"])
        else:
            sched = Schedule.constant(_temperature(face, "mold_temperature"))
        convective.append(ConvectiveSpec(face["facet_set"], float(face["h_W_m2K"]), sched))
    prescribed = [(p["node_set"], _temperature(p, "temperature")) for p in doc["thermal"].get("prescribed", [])]

    mech = doc.get("mechanics", {})
    constraints = []
    for c in mech.get("constraints", []):
        sched = None
        if "displacement_schedule" in c:
            s = c["displacement_schedule"]
            sched = Schedule(s["times_s"], s["displacements_m"])
        constraints.append(ConstraintSpec(
            c["node_set"], tuple(AXES[a] for a in c["components"]),
            tuple(c["phases"]) if "phases" in c else None, sched,
        ))

    contact = None
    if "contact" in doc:
        c = doc["contact"]
        mu_s = float(c.get("static_friction", 0.0))
        mu_d = float(c.get("dynamic_friction", mu_s))
        fr = {"cooling": True, "demolding": True}
        fr.update(c.get("friction", {}))
        if "opening_schedule" in c:
            opening = Schedule(c["opening_schedule"]["times_s"], c["opening_schedule"]["displacements_m"])
        else:
            opening = Schedule.constant(0.0)
        contact = ContactSpec(
            c["node_set"], float(c["normal_penalty_N_m"]), float(c["tangential_penalty_N_m"]), mu_s, mu_d, fr,
            bool(c.get("initially_closed", True)), list(c["primitives"]),
            np.asarray(c.get("opening_direction", [0.0, 0.0, 1.0]), dtype=float), opening,
        )

    cooling = doc["phases"]["cooling"]
    demold = doc["phases"].get("demolding", {"duration_s": 0.0, "dt_s": cooling["dt_s"]})
    solver = doc.get("solver", {})
    out = doc.get("output", {})
    return SimulationConfig(
        mesh_path=_resolve(base, doc["mesh_path"]),
        material_card_path=_resolve(base, doc["material_card_path"]),
        initial_temperature=_temperature(doc, "initial_temperature"),
        convective=convective,
        prescribed=prescribed,
        constraints=constraints,
        body_force=np.asarray(mech.get("body_force_N_m3", [0.0, 0.0, 0.0]), dtype=float),
        initial_pressure=float(mech.get("initial_pressure_Pa", 0.0)),
        pressure_facet_set=mech.get("pressure_facet_set"),
        contact=contact,
        cooling_duration=float(cooling["duration_s"]),
        cooling_dt=float(cooling["dt_s"]),
        demolding_temperature=_temperature(cooling, "demolding_temperature"),
        demolding_duration=float(demold["duration_s"]),
        demolding_dt=float(demold["dt_s"]),
        picard_tolerance=float(solver.get("picard_tolerance", 1e-6)),
        max_picard_iterations=int(solver.get("max_picard_iterations", 50)),
        thermal_tolerance=float(solver.get("thermal_tolerance", 1e-12)),
        preconditioner=solver.get("preconditioner", "ilu0"),
        min_dt=solver.get("min_dt_s"),
        export_matrices=bool(solver.get("export_matrices", False)),
        output_dir=_resolve(base, out["directory"]) if "directory" in out else None,
        output_every=int(out.get("every_n_steps", 1)),
        amplification=float(out.get("amplification", 1.0)),
        write_vtk=bool(out.get("vtk", True)),
        fields=out.get("fields"),
        source=doc,
    )


def read_config_document(path) -> dict:
    path = Path(path)
    with open(path, "r") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([Diagnostic("error", "/", f"{path}: not valid JSON ({exc})")]) from None


def load_config(path, check_files: bool = True) -> SimulationConfig:
    path = Path(path)
    return config_from_dict(read_config_document(path), path.parent, check_files)


def load_mesh_and_card(cfg: SimulationConfig) -> tuple[Mesh, MaterialCard]:
    return load_mesh(cfg.mesh_path), load_material_card(cfg.material_card_path)
