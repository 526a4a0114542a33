"""Linear tetrahedral meshes: storage, file ingestion, and element kernels."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Local faces of a positively oriented tet, ordered so the right-hand normal
# points away from the opposite vertex.
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

DEGENERATE_VOLUME = 1e-18


class MeshError(ValueError):
    """Mesh file or mesh topology is invalid."""


class MeshParseError(MeshError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class ElementGeometry:
    gradients: np.ndarray  # (4, 3) shape-function gradients, 1/m
    volume: float


@dataclass
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    facet_sets: dict[str, np.ndarray] = field(default_factory=dict)
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)
    # Element numbers as written in the source file, used in error messages.
    element_labels: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 3)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 4)
        self.facet_sets = {k: np.asarray(v, dtype=np.int64).reshape(-1, 3) for k, v in self.facet_sets.items()}
        self.node_sets = {k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in self.node_sets.items()}

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def signed_volumes(self) -> np.ndarray:
        x = self.nodes[self.elements]
        d = x[:, 1:] - x[:, :1]
        return np.linalg.det(d) / 6.0

    def validate(self) -> "Mesh":
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element node index out of range")
        vol = self.signed_volumes()
        bad = np.flatnonzero(vol <= 0.0)
        if bad.size:
            raise MeshError(
                f"element {self.label(bad[0])} is inverted or degenerate (signed volume {vol[bad[0]]:.3e} m^3)"
            )
        key = np.sort(self.elements, axis=1)
        _, counts = np.unique(key, axis=0, return_counts=True)
        if np.any(counts > 1):
            raise MeshError("duplicate elements")
        boundary = {tuple(f) for f in np.sort(boundary_facets(self)[0], axis=1)}
        for name, facets in self.facet_sets.items():
            if facets.size and (facets.min() < 0 or facets.max() >= n):
                raise MeshError(f"facet set {name!r}: node index out of range")
            for f in np.sort(facets, axis=1):
                if tuple(f) not in boundary:
                    raise MeshError(f"facet set {name!r} contains an interior or unknown triangle {tuple(f)}")
        for name, ids in self.node_sets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise MeshError(f"node set {name!r}: node index out of range")
        return self

    def label(self, index: int) -> str:
        """Human-readable id of an element: its file number when known, else its index."""
        if self.element_labels is None:
            return str(int(index))
        return f"{int(self.element_labels[index])} (index {int(index)})"

    def nodes_of(self, name: str) -> np.ndarray:
        """Nodes of a named node set, or of a facet set when no node set has that name."""
        if name in self.node_sets:
            return self.node_sets[name]
        if name in self.facet_sets:
            return np.unique(self.facet_sets[name])
        raise KeyError(f"mesh has no node or facet set named {name!r}")

    def summary(self) -> dict:
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return {
            "nodes": self.n_nodes,
            "elements": self.n_elements,
            "volume_m3": float(self.signed_volumes().sum()),
            "bounding_box_m": [lo.tolist(), hi.tolist()],
            "facet_sets": {k: int(len(v)) for k, v in sorted(self.facet_sets.items())},
            "node_sets": {k: int(len(v)) for k, v in sorted(self.node_sets.items())},
        }


def geometry(mesh: Mesh):
    """Shape-function gradients ``(E, 4, 3)`` and volumes ``(E,)`` of every element."""
    x = mesh.nodes[mesh.elements]
    d = x[:, 1:] - x[:, :1]
    det = np.linalg.det(d)
    vol = det / 6.0
    bad = np.flatnonzero(np.abs(vol) < DEGENERATE_VOLUME)
    if bad.size:
        raise MeshError(f"element {mesh.label(bad[0])} is degenerate (volume {vol[bad[0]]:.3e} m^3)")
    inv = np.linalg.inv(d)
    grads = np.empty((mesh.n_elements, 4, 3))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return grads, vol


def element_geometry(mesh: Mesh, element_id: int) -> ElementGeometry:
    if not 0 <= element_id < mesh.n_elements:
        raise IndexError(f"element id {element_id} out of range")
    labels = mesh.element_labels if mesh.element_labels is not None else np.arange(mesh.n_elements)
    sub = Mesh(mesh.nodes, mesh.elements[element_id:element_id + 1], element_labels=labels[element_id:element_id + 1])
    g, v = geometry(sub)
    return ElementGeometry(g[0], float(v[0]))


def boundary_facets(mesh: Mesh):
    """Triangles used by exactly one element, outward oriented.

    Returns
    -------
    facets : (F, 3) int array
        Node triples ordered so the right-hand normal points out of the owner.
    owners : (F,) int array
    """
    faces = mesh.elements[:, TET_FACES].reshape(-1, 3)
    owner = np.repeat(np.arange(mesh.n_elements), 4)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = np.flatnonzero(counts > 2)[0]
        raise MeshError(f"non-manifold mesh: triangle shared by {counts[bad]} elements")
    single = counts[inverse] == 1
    facets, owners = faces[single], owner[single]
    # Orientation follows from TET_FACES for positive elements; recheck for safety.
    opposite = mesh.nodes[mesh.elements[owners]].mean(axis=1)
    n, _ = facet_normals(mesh.nodes, facets)
    centroid = mesh.nodes[facets].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centroid - opposite) < 0.0
    facets[flip] = facets[flip][:, [0, 2, 1]]
    return facets, owners


def facet_normals(nodes: np.ndarray, facets: np.ndarray):
    """Unit right-hand normals and areas of triangles."""
    p = nodes[facets]
    c = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(c, axis=1)
    return c / np.where(area2 > 0, area2, 1.0)[:, None], 0.5 * area2


def oriented_facets(mesh: Mesh, facets: np.ndarray) -> np.ndarray:
    """Reorder a facet set so every triangle's normal points out of the mesh."""
    bf, _ = boundary_facets(mesh)
    lookup = {tuple(sorted(f)): f for f in bf}
    out = np.empty_like(facets)
    for i, f in enumerate(facets):
        try:
            out[i] = lookup[tuple(sorted(f))]
        except KeyError:
            raise MeshError(f"triangle {tuple(f)} is not on the mesh boundary") from None
    return out


# -- file formats -----------------------------------------------------------

GMSH_TET, GMSH_TRIANGLE, GMSH_POINT = 4, 2, 15
_GMSH_NODES_PER_TYPE = {1: 2, 2: 3, 3: 4, 4: 4, 5: 8, 6: 6, 7: 5, 8: 3, 9: 6, 11: 10, 15: 1}


def load_mesh(path) -> Mesh:
    """Read a Gmsh ASCII v2.2 (``.msh``) or JSON (``.json``) mesh and validate it."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        mesh = _read_json_mesh(path)
    else:
        mesh = _read_gmsh(path)
    return mesh.validate()


def _read_gmsh(path: Path) -> Mesh:
    lines = path.read_text().splitlines()
    pos = 0

    def fail(msg):
        raise MeshParseError(path, pos + 1, msg)

    names: dict[int, str] = {}
    node_ids: dict[int, int] = {}
    coords: list[list[float]] = []
    tets: list[list[int]] = []
    tet_labels: list[int] = []
    tris: dict[int, list] = {}
    points: dict[int, list] = {}
    seen_format = False
    while pos < len(lines):
        head = lines[pos].strip()
        if not head:
            pos += 1
            continue
        if head == "$MeshFormat":
            pos += 1
            parts = lines[pos].split()
            if len(parts) < 3 or not parts[0].startswith("2."):
                fail(f"unsupported mesh format {lines[pos]!r}; expected ASCII 2.2")
            if parts[1] != "0":
                fail("binary Gmsh files are not supported")
            seen_format = True
            pos += 1
            if lines[pos].strip() != "$EndMeshFormat":
                fail("expected $EndMeshFormat")
        elif head == "$PhysicalNames":
            pos += 1
            count = int(lines[pos])
            for _ in range(count):
                pos += 1
                parts = lines[pos].split(maxsplit=2)
                try:
                    names[int(parts[1])] = parts[2].strip().strip('"')
                except (IndexError, ValueError):
                    fail("malformed physical name")
            pos += 1
            if lines[pos].strip() != "$EndPhysicalNames":
                fail("expected $EndPhysicalNames")
        elif head == "$Nodes":
            pos += 1
            count = int(lines[pos])
            for _ in range(count):
                pos += 1
                parts = lines[pos].split()
                try:
                    node_ids[int(parts[0])] = len(coords)
                    coords.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except (IndexError, ValueError):
                    fail("malformed node line")
            pos += 1
            if lines[pos].strip() != "$EndNodes":
                fail("expected $EndNodes")
        elif head == "$Elements":
            pos += 1
            count = int(lines[pos])
            for _ in range(count):
                pos += 1
                try:
                    parts = [int(v) for v in lines[pos].split()]
                    etype, ntags = parts[1], parts[2]
                    tags = parts[3:3 + ntags]
                    conn = parts[3 + ntags:]
                    if len(conn) != _GMSH_NODES_PER_TYPE.get(etype, len(conn)):
                        fail(f"element type {etype} has {len(conn)} nodes")
                    conn = [node_ids[c] for c in conn]
                except (IndexError, ValueError):
                    fail("malformed element line")
                except KeyError as exc:
                    fail(f"element references unknown node {exc.args[0]}")
                phys = tags[0] if tags else 0
                if etype == GMSH_TET:
                    tets.append(conn)
                    tet_labels.append(parts[0])
                elif etype == GMSH_TRIANGLE:
                    tris.setdefault(phys, []).append(conn)
                elif etype == GMSH_POINT:
                    points.setdefault(phys, []).append(conn[0])
            pos += 1
            if lines[pos].strip() != "$EndElements":
                fail("expected $EndElements")
        elif head.startswith("$"):
            end = "$End" + head[1:]
            while pos < len(lines) and lines[pos].strip() != end:
                pos += 1
        else:
            fail(f"unexpected content {head[:40]!r}")
        pos += 1
    if not seen_format:
        raise MeshParseError(path, 1, "missing $MeshFormat block")
    if not tets:
        raise MeshParseError(path, len(lines), "no tetrahedra (type 4) found")

    facet_sets = {names.get(k, f"physical_{k}"): np.array(v) for k, v in tris.items() if k}
    node_sets = {names.get(k, f"physical_{k}"): np.array(v) for k, v in points.items() if k}
    for name, facets in facet_sets.items():
        node_sets.setdefault(name, np.unique(facets))
    return Mesh(np.array(coords), np.array(tets), facet_sets, node_sets, np.array(tet_labels))


def _read_json_mesh(path: Path) -> Mesh:
    import jsonschema

    from .material import load_schema

    doc = json.loads(path.read_text())
    try:
        jsonschema.validate(doc, load_schema("mesh.schema.json"))
    except jsonschema.ValidationError as exc:
        raise MeshError(f"{path}: {exc.message}") from None
    scale = float(doc.get("scale", 1.0))
    return Mesh(
        np.asarray(doc["nodes"], dtype=float) * scale,
        np.asarray(doc["elements"], dtype=np.int64),
        {k: np.asarray(v) for k, v in doc.get("facet_sets", {}).items()},
        {k: np.asarray(v) for k, v in doc.get("node_sets", {}).items()},
    )


def write_gmsh(path, mesh: Mesh) -> None:
    """Write ASCII v2.2 with facet sets as tagged triangles and node sets as points."""
    tags = {}
    for name in list(mesh.facet_sets) + [n for n in mesh.node_sets if n not in mesh.facet_sets]:
        tags[name] = len(tags) + 1
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(tags))]
    for name, tag in tags.items():
        dim = 2 if name in mesh.facet_sets else 0
        out.append(f'{dim} {tag} "{name}"')
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.nodes.tolist())]
    out.append("$EndNodes")
    rows = []
    for name, facets in mesh.facet_sets.items():
        rows += [f"{GMSH_TRIANGLE} 2 {tags[name]} {tags[name]} " + " ".join(str(v + 1) for v in f) for f in facets]
    for name, ids in mesh.node_sets.items():
        if name in mesh.facet_sets:
            continue
        rows += [f"{GMSH_POINT} 2 {tags[name]} {tags[name]} {v + 1}" for v in ids]
    rows += [f"{GMSH_TET} 2 0 0 " + " ".join(str(v + 1) for v in e) for e in mesh.elements]
    out += ["$Elements", str(len(rows))]
    out += [f"{i + 1} {r}" for i, r in enumerate(rows)]
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def write_json_mesh(path, mesh: Mesh) -> None:
    doc = {
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "facet_sets": {k: v.tolist() for k, v in mesh.facet_sets.items()},
        "node_sets": {k: v.tolist() for k, v in mesh.node_sets.items()},
    }
    Path(path).write_text(json.dumps(doc))
