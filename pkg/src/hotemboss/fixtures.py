"""Structured tetrahedral meshes for tests, benchmarks and the desk-scale cases.

Hexahedral cells of a tensor-product grid are split into six tetrahedra along
the main diagonal (Kuhn subdivision), which is conforming between neighbouring
cells for any axis-aligned grid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, boundary_facets, facet_normals

_KUHN = []
for perm in itertools.permutations(range(3)):
    corner = np.zeros(3, dtype=int)
    tet = [tuple(corner)]
    for axis in perm:
        corner = corner.copy()
        corner[axis] = 1
        tet.append(tuple(corner))
    _KUHN.append(tet)
_KUHN = np.array(_KUHN)  # (6, 4, 3) corner offsets


def grid_mesh(xs, ys, zs, active=None) -> Mesh:
    """Tetrahedral mesh of the active cells of a tensor grid (no sets attached)."""
    xs, ys, zs = (np.asarray(v, dtype=float) for v in (xs, ys, zs))
    nx, ny, nz = xs.size - 1, ys.size - 1, zs.size - 1
    if active is None:
        active = np.ones((nx, ny, nz), dtype=bool)
    cells = np.argwhere(active)
    # node index of grid point (i, j, k)
    corner = cells[:, None, None, :] + _KUHN[None]  # (C, 6, 4, 3)
    gid = (corner[..., 0] * (ny + 1) + corner[..., 1]) * (nz + 1) + corner[..., 2]
    tets = gid.reshape(-1, 4)
    used, inverse = np.unique(tets, return_inverse=True)
    tets = inverse.reshape(-1, 4)
    i, rem = np.divmod(used, (ny + 1) * (nz + 1))
    j, k = np.divmod(rem, nz + 1)
    nodes = np.column_stack([xs[i], ys[j], zs[k]])
    # Orientation depends on the permutation parity; fix negatives.
    x = nodes[tets]
    neg = np.linalg.det(x[:, 1:] - x[:, :1]) < 0.0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return Mesh(nodes, tets)


def _classify(mesh: Mesh, rules) -> None:
    """Attach facet sets: ``rules`` maps name -> predicate(centroid, normal)."""
    facets, _ = boundary_facets(mesh)
    normals, _ = facet_normals(mesh.nodes, facets)
    centroid = mesh.nodes[facets].mean(axis=1)
    taken = np.zeros(len(facets), dtype=bool)
    for name, rule in rules.items():
        hit = rule(centroid, normals) & ~taken
        taken |= hit
        mesh.facet_sets[name] = facets[hit]
        mesh.node_sets[name] = np.unique(facets[hit])


def box_mesh(nx: int, ny: int, nz: int, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Box split into ``6 nx ny nz`` tets with facet sets ``xmin`` ... ``zmax``."""
    o, s = np.asarray(origin, float), np.asarray(size, float)
    mesh = grid_mesh(*(np.linspace(o[a], o[a] + s[a], n + 1) for a, n in enumerate((nx, ny, nz))))
    tol = 1e-9 * s.max()
    rules = {}
    for a, axis in enumerate("xyz"):
        rules[f"{axis}min"] = lambda c, n, a=a: np.abs(c[:, a] - o[a]) < tol
        rules[f"{axis}max"] = lambda c, n, a=a: np.abs(c[:, a] - o[a] - s[a]) < tol
    _classify(mesh, rules)
    return mesh


def _graded(breaks, h) -> np.ndarray:
    pts = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / h - 1e-9)))
        pts.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(pts)


@dataclass(frozen=True)
class RibbedPlate:
    """Quarter model of a residual layer carrying straight ribs along y.

    The symmetry planes are x = 0 and y = 0; the substrate is z = 0. Ribs of
    width ``rib_width`` and height ``rib_height`` sit on the layer top
    (z = ``layer``) starting at x = ``first_rib`` with spacing ``pitch``. The
    region beyond the last rib up to ``length`` is unfeatured.
    """

    length: float = 6.0e-3
    width: float = 1.0e-3
    layer: float = 0.5e-3
    rib_width: float = 0.25e-3
    rib_height: float = 0.25e-3
    pitch: float = 0.5e-3
    first_rib: float = 0.25e-3
    n_ribs: int = 6
    h_field: float = 0.0625e-3
    h_rim: float = 0.125e-3
    ny: int = 4
    nz_layer: int = 8
    nz_rib: int = 4

    @property
    def ribs(self) -> list[tuple[float, float]]:
        return [(self.first_rib + k * self.pitch, self.first_rib + k * self.pitch + self.rib_width)
                for k in range(self.n_ribs)]

    @property
    def field_end(self) -> float:
        return self.ribs[-1][1]

    @property
    def top(self) -> float:
        return self.layer + self.rib_height

    def mesh(self) -> Mesh:
        breaks = [0.0]
        for a, b in self.ribs:
            breaks += [a, b]
        xs = np.concatenate([_graded(breaks, self.h_field), _graded([self.field_end, self.length], self.h_rim)[1:]])
        ys = np.linspace(0.0, self.width, self.ny + 1)
        zs = np.concatenate([np.linspace(0.0, self.layer, self.nz_layer + 1),
                             np.linspace(self.layer, self.top, self.nz_rib + 1)[1:]])
        xc, zc = 0.5 * (xs[1:] + xs[:-1]), 0.5 * (zs[1:] + zs[:-1])
        in_rib = np.zeros_like(xc, dtype=bool)
        for a, b in self.ribs:
            in_rib |= (xc > a) & (xc < b)
        active = (zc[None, :] < self.layer) | in_rib[:, None]
        active = np.broadcast_to(active[:, None, :], (xc.size, ys.size - 1, zc.size))
        mesh = grid_mesh(xs, ys, zs, active)

        tol = 1e-9 * self.length
        _classify(mesh, {
            "substrate": lambda c, n: np.abs(c[:, 2]) < tol,
            "sym_x": lambda c, n: np.abs(c[:, 0]) < tol,
            "sym_y": lambda c, n: np.abs(c[:, 1]) < tol,
            "side_y": lambda c, n: np.abs(c[:, 1] - self.width) < tol,
            "rim_edge": lambda c, n: np.abs(c[:, 0] - self.length) < tol,
            "mold_interface": lambda c, n: np.ones(len(c), dtype=bool),
        })
        for k, (a, b) in enumerate(self.ribs):
            x, z = mesh.nodes[:, 0], mesh.nodes[:, 2]
            mesh.node_sets[f"feature_rib_{k}"] = np.flatnonzero(
                (np.abs(z - self.top) < tol) & (x > a - tol) & (x < b + tol)
            )
        return mesh.validate()

    def mold_primitives(self, margin: float = 1.0e-2) -> list[dict]:
        """Rigid mold insert as a union of a half-space and tooth boxes (config form)."""
        big = self.width + margin
        prims = [{"type": "half_space", "point_m": [0.0, 0.0, self.top], "normal": [0.0, 0.0, -1.0]}]
        edges = [-margin] + [v for ab in self.ribs for v in ab] + [self.length + margin]
        for a, b in zip(edges[0::2], edges[1::2]):
            prims.append({"type": "box", "min_m": [a, -margin, self.layer], "max_m": [b, big, self.top]})
        return prims

    def corner_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance in the x-z plane from points to the nearest rib corner line."""
        corners = []
        for a, b in self.ribs:
            corners += [(a, self.layer), (b, self.layer), (a, self.top), (b, self.top)]
        corners = np.array(corners)
        d = points[:, None, [0, 2]] - corners[None]
        return np.sqrt((d ** 2).sum(axis=2)).min(axis=1)


def mirror_mesh(mesh: Mesh, axis: int) -> Mesh:
    """Reflect a mesh across the plane ``x[axis] = 0`` and merge the halves.

    Nodes on the plane are shared. Facet and node sets are mirrored too, except
    those lying on the mirror plane, which become interior and are dropped.
    """
    n = mesh.n_nodes
    on_plane = np.abs(mesh.nodes[:, axis]) < 1e-12 * np.abs(mesh.nodes).max()
    image = np.where(on_plane, np.arange(n), n + np.cumsum(~on_plane) - 1)
    refl = mesh.nodes[~on_plane].copy()
    refl[:, axis] *= -1.0
    nodes = np.vstack([mesh.nodes, refl])
    mirrored = image[mesh.elements][:, [0, 2, 1, 3]]
    elements = np.vstack([mesh.elements, mirrored])
    facet_sets, node_sets = {}, {}
    for name, f in mesh.facet_sets.items():
        if np.all(on_plane[f]):
            continue
        facet_sets[name] = np.vstack([f, image[f][:, [0, 2, 1]]])
    for name, ids in mesh.node_sets.items():
        if np.all(on_plane[ids]) and name not in facet_sets:
            continue
        node_sets[name] = np.union1d(ids, image[ids])
    return Mesh(nodes, elements, facet_sets, node_sets).validate()


def flat_plate(length: float = 2.0e-3, width: float = 0.5e-3, thickness: float = 0.5e-3,
               nx: int = 16, ny: int = 4, nz: int = 8) -> Mesh:
    """Unfeatured quarter plate with the same set names as :class:`RibbedPlate`."""
    mesh = grid_mesh(np.linspace(0.0, length, nx + 1), np.linspace(0.0, width, ny + 1),
                     np.linspace(0.0, thickness, nz + 1))
    tol = 1e-9 * length
    _classify(mesh, {
        "substrate": lambda c, n: np.abs(c[:, 2]) < tol,
        "sym_x": lambda c, n: np.abs(c[:, 0]) < tol,
        "sym_y": lambda c, n: np.abs(c[:, 1]) < tol,
        "side_y": lambda c, n: np.abs(c[:, 1] - width) < tol,
        "rim_edge": lambda c, n: np.abs(c[:, 0] - length) < tol,
        "mold_interface": lambda c, n: np.abs(c[:, 2] - thickness) < tol,
    })
    return mesh.validate()
