"""Regenerate the mesh fixtures and example cases shipped in the repository.

Usage::

    python3 tools/make_fixtures.py
"""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from hotemboss.fixtures import RibbedPlate, box_mesh, flat_plate
from hotemboss.mesh import Mesh, write_gmsh

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"
CASES = ROOT / "cases"

CONTACT_PENALTY = {"normal_penalty_N_m": 1.0e8, "tangential_penalty_N_m": 1.0e7}


def fixture_meshes() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    write_gmsh(FIXTURES / "cube_2x2x2.msh", box_mesh(2, 2, 2))
    tet = Mesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
               np.array([[0, 1, 2, 3]]))
    write_gmsh(FIXTURES / "single_tet.msh", tet)
    inverted = Mesh(tet.nodes, np.array([[0, 2, 1, 3]]))
    write_gmsh(FIXTURES / "inverted_tet.msh", inverted)
    text = (FIXTURES / "single_tet.msh").read_text().splitlines()
    i = text.index("$Nodes")
    text[i + 2] = "1 0.0 zero 0.0"
    (FIXTURES / "bad_node_line.msh").write_text("\n".join(text) + "\n")


def symmetry_constraints() -> list[dict]:
    return [
        {"node_set": "sym_x", "components": ["x"]},
        {"node_set": "sym_y", "components": ["y"]},
        {"node_set": "side_y", "components": ["y"]},
        {"node_set": "substrate", "components": ["z"], "phases": ["cooling"]},
        {"node_set": "substrate", "components": ["x", "y", "z"], "phases": ["demolding"]},
    ]


def case(mesh_file: str, primitives: list[dict], friction: bool, out: str, comment: str) -> dict:
    mu = {"static_friction": 0.3, "dynamic_friction": 0.25} if friction else {}
    return {
        "comment": comment,
        "mesh_path": mesh_file,
        "material_card_path": "pmma_desk.json",
        "initial_temperature_C": 183.0,
        "thermal": {
            "convective": [
                {"facet_set": "mold_interface", "h_W_m2K": 2000.0, "mold_temperature_C": 70.0},
                {"facet_set": "substrate", "h_W_m2K": 2000.0, "mold_temperature_C": 70.0},
            ]
        },
        "mechanics": {"constraints": symmetry_constraints()},
        "contact": {
            "node_set": "mold_interface",
            **CONTACT_PENALTY,
            **mu,
            "friction": {"cooling": friction, "demolding": friction},
            "initially_closed": True,
            "primitives": primitives,
            "opening_direction": [0.0, 0.0, 1.0],
            "opening_schedule": {"times_s": [0.0, 2.0], "displacements_m": [0.0, 4.0e-4]},
        },
        "phases": {
            "cooling": {"duration_s": 60.0, "dt_s": 0.1, "demolding_temperature_C": 90.0},
            "demolding": {"duration_s": 2.0, "dt_s": 0.05},
        },
        "solver": {"picard_tolerance": 1.0e-6, "max_picard_iterations": 50, "preconditioner": "ilu0"},
        "output": {"directory": out, "every_n_steps": 10, "amplification": 25.0},
    }


def cases() -> None:
    CASES.mkdir(parents=True, exist_ok=True)
    shutil.copy(ROOT / "src" / "hotemboss" / "data" / "pmma_desk.json", CASES / "pmma_desk.json")
    plate = RibbedPlate()
    write_gmsh(CASES / "ribbed_plate.msh", plate.mesh())
    flat = flat_plate()
    write_gmsh(CASES / "flat_plate.msh", flat)
    half_space = [{"type": "half_space", "point_m": [0.0, 0.0, 0.5e-3], "normal": [0.0, 0.0, -1.0]}]
    docs = {
        "ribbed_frictionless.json": case(
            "ribbed_plate.msh", plate.mold_primitives(), False, "out/ribbed_frictionless",
            "Ribbed quarter plate cooled in the mold from 183 C without friction, then demolded."),
        "ribbed_friction.json": case(
            "ribbed_plate.msh", plate.mold_primitives(), True, "out/ribbed_friction",
            "Ribbed quarter plate cooled and demolded with Coulomb friction on the mold interface."),
        "flat_frictionless.json": case(
            "flat_plate.msh", half_space, False, "out/flat_frictionless",
            "Unfeatured plate under a flat mold face, frictionless."),
    }
    for name, doc in docs.items():
        (CASES / name).write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    fixture_meshes()
    cases()
