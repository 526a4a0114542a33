"""Rigid-mold penalty contact with Coulomb stick/slip friction.

Sign conventions
----------------
* ``gap`` is positive for penetration into the mold and negative when the node
  is separated from it.
* The mold normal ``nu`` returned by :func:`gap` points out of the mold, into
  the free space occupied by the polymer.
* ``f_n = -lambda_n * gap`` is the normal contact force, so it is negative
  (compressive) on closed nodes and zero on open ones. The force vector acting
  on the polymer node is ``-f_n * nu + f_t``.
* ``f_t`` is the tangential force on the polymer node; the trial value is
  ``-lambda_t * u_t`` where ``u_t`` is the tangential displacement from the
  stick anchor, measured in the mold frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .thermal import Schedule

OPEN, STICK, SLIP = 0, 1, 2
STATUS_NAMES = {OPEN: "open", STICK: "stick", SLIP: "slip"}
RESTICK_HYSTERESIS = 1e-3


class ContactParamsError(ValueError):
    pass


@dataclass(frozen=True)
class ContactParams:
    normal_penalty: float
    tangential_penalty: float
    static_friction: float = 0.0
    dynamic_friction: float = 0.0

    def __post_init__(self):
        if not (self.normal_penalty > 0.0 and self.tangential_penalty > 0.0):
            raise ContactParamsError("penalty parameters must be positive")
        if self.static_friction < 0.0 or self.dynamic_friction < 0.0:
            raise ContactParamsError("friction coefficients must be non-negative")
        if self.dynamic_friction > self.static_friction:
            raise ContactParamsError(
                f"dynamic friction {self.dynamic_friction} exceeds static friction {self.static_friction}"
            )


# -- rigid surface -------------------------------------------------------------


class HalfSpace:
    """Mold material on the side opposite to ``normal`` of the plane through ``point``."""

    def __init__(self, point, normal):
        self.point = np.asarray(point, dtype=float)
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def signed_distance(self, x):
        sd = (x - self.point) @ self.normal
        return sd, np.broadcast_to(self.normal, x.shape).copy()


class Box:
    """Axis-aligned block of mold material."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ValueError("box max corner must exceed min corner")

    def signed_distance(self, x):
        c = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        rel = x - c
        q = np.abs(rel) - half
        qpos = np.maximum(q, 0.0)
        out = np.linalg.norm(qpos, axis=1)
        qmax = q.max(axis=1)
        sd = np.where(qmax > 0.0, out, qmax)
        sgn = np.where(rel >= 0.0, 1.0, -1.0)
        normal = np.zeros_like(x)
        outside = qmax > 0.0
        normal[outside] = sgn[outside] * qpos[outside] / out[outside, None]
        axis = np.argmax(q, axis=1)
        inside = ~outside
        rows = np.flatnonzero(inside)
        normal[rows, axis[inside]] = sgn[rows, axis[inside]]
        return sd, normal


def primitive_from_dict(doc: dict):
    kind = doc["type"]
    if kind == "half_space":
        return HalfSpace(doc["point_m"], doc["normal"])
    if kind == "box":
        return Box(doc["min_m"], doc["max_m"])
    raise ValueError(f"unknown mold primitive type {kind!r}")


@dataclass
class RigidSurface:
    """Union of mold primitives moving by a prescribed rigid translation."""

    primitives: list
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    opening: Schedule = field(default_factory=lambda: Schedule.constant(0.0))
    start_time: float = np.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        self.direction = d / np.linalg.norm(d)

    def translation(self, t: float) -> np.ndarray:
        if t <= self.start_time:
            return np.zeros(3)
        return self.direction * self.opening(t - self.start_time)


def tangent_frame(normal: np.ndarray) -> np.ndarray:
    """Two orthonormal tangents ``(N, 2, 3)`` per unit normal."""
    normal = np.atleast_2d(normal)
    a = np.where(np.abs(normal[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = a - (a * normal).sum(axis=1, keepdims=True) * normal
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normal, t1)
    return np.stack([t1, t2], axis=1)


def gap(points, surface: RigidSurface, t: float = 0.0):
    """Signed gap, mold normal, tangent frame and primitive index for each point.

    The nearest (most penetrated) primitive wins; exact ties go to the lowest
    primitive index.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float)) - surface.translation(t)
    sds, normals = zip(*(p.signed_distance(x) for p in surface.primitives))
    sds = np.stack(sds)            # (P, N)
    which = np.argmin(sds, axis=0)
    idx = np.arange(x.shape[0])
    sd = sds[which, idx]
    nu = np.stack(normals)[which, idx]
    return -sd, nu, tangent_frame(nu), which


# -- force law -----------------------------------------------------------------


def contact_force(gap_value, u_t, params: ContactParams, prev_status=None, friction: bool = True):
    """Penalty normal force and Coulomb-capped tangential force.

    Parameters
    ----------
    gap_value : array_like (N,)
        Penetration (positive) or separation (negative).
    u_t : array_like (N, d)
        Tangential displacement from the stick anchor.
    prev_status : array_like (N,), optional
        Status from the previous sweep; a node already slipping keeps the
        dynamic coefficient until its trial force drops below
        ``mu_d |f_n| (1 - 1e-3)``.

    Returns
    -------
    f_n, f_t, status
    """
    g = np.atleast_1d(np.asarray(gap_value, dtype=float))
    ut = np.asarray(u_t, dtype=float).reshape(g.size, -1)
    prev = np.full(g.size, OPEN) if prev_status is None else np.atleast_1d(prev_status)
    closed = g > 0.0
    f_n = np.where(closed, -params.normal_penalty * g, 0.0)
    trial = -params.tangential_penalty * ut
    mag = np.linalg.norm(trial, axis=1)
    if not friction:
        status = np.where(closed, SLIP, OPEN)
        return f_n, np.zeros_like(trial), status
    cap_s = params.static_friction * np.abs(f_n)
    cap_d = params.dynamic_friction * np.abs(f_n)
    limit = np.where(prev == SLIP, cap_d * (1.0 - RESTICK_HYSTERESIS), cap_s)
    # A zero trial force never slips (no direction to slip in).
    stick = closed & ((mag < limit) | (mag == 0.0))
    slip = closed & ~stick
    f_t = np.where(stick[:, None], trial, 0.0)
    direction = np.divide(trial, mag[:, None], out=np.zeros_like(trial), where=mag[:, None] > 0.0)
    f_t = np.where(slip[:, None], cap_d[:, None] * direction, f_t)
    status = np.where(stick, STICK, np.where(slip, SLIP, OPEN))
    return f_n, f_t, status


@dataclass
class ContactNodeState:
    """Per-candidate-node contact state (arrays over candidate nodes)."""

    status: np.ndarray
    gap: np.ndarray
    u_t: np.ndarray       # (N, 3) tangential displacement from the anchor
    f_n: np.ndarray
    f_t: np.ndarray       # (N, 3)
    anchor: np.ndarray    # (N, 3) stick anchor in the mold frame
    normal: np.ndarray    # (N, 3) mold normal at the last evaluation

    @classmethod
    def empty(cls, n: int) -> "ContactNodeState":
        z3 = np.zeros((n, 3))
        return cls(np.full(n, OPEN, dtype=np.int64), np.zeros(n), z3.copy(), np.zeros(n), z3.copy(),
                   z3.copy(), z3.copy())

    def copy(self) -> "ContactNodeState":
        return ContactNodeState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def polymer_forces(self) -> np.ndarray:
        """Force vector on each polymer node (N, 3)."""
        return -self.f_n[:, None] * self.normal + self.f_t

    def counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.status == code)) for code, name in STATUS_NAMES.items()}


def demolding_force(state: ContactNodeState, direction) -> float:
    """Contact force (N) transmitted from the part to the mold along ``direction``.

    This is ``-sum(-f_n nu + f_t) . d`` over closed nodes, the reaction of
    the polymer on the mold. A compressed part pushing the mold open gives a
    positive value; friction holding the mold back while it opens gives a
    negative one.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    closed = state.status != OPEN
    return float(-(state.polymer_forces()[closed] @ d).sum()) + 0.0


class ContactSet:
    """Contact candidates of a mesh against one rigid mold."""

    def __init__(self, nodes: np.ndarray, surface: RigidSurface, params: ContactParams):
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.surface = surface
        self.params = params

    def initial_state(self, x: np.ndarray, t: float = 0.0, closed: bool = True, friction: bool = True,
                      tol: float = 1e-12) -> ContactNodeState:
        """State at the start of cooling: nodes touching the mold start closed with zero force."""
        st = ContactNodeState.empty(self.nodes.size)
        g, nu, _, _ = gap(x[self.nodes], self.surface, t)
        st.gap, st.normal = g, nu
        if closed:
            touching = g >= -tol
            st.status[touching] = STICK if friction else SLIP
        proj = x[self.nodes] + g[:, None] * nu
        st.anchor = proj - self.surface.translation(t)
        return st

    def linearize(self, x_iter, x_ref, t, status, anchor, slip_stiffness):
        """Node-block stiffness ``(N, 3, 3)`` and right-hand side ``(N, 3)``.

        The system unknown is the displacement increment from ``x_ref``;
        normal penalties are linearized about ``x_iter`` (exact for planar
        primitives). Sticking nodes carry the tangential penalty spring to
        their anchor. Slipping nodes carry a secant spring to the same anchor
        with stiffness ``slip_stiffness`` (``mu_d |f_n| / |u_t|`` from the
        previous sweep), so at the fixed point the tangential force sits
        exactly on the dynamic friction cap while the system stays symmetric.
        """
        p = self.params
        g, nu, _, _ = gap(x_iter, self.surface, t)
        closed = status != OPEN
        nn = np.einsum("ni,nj->nij", nu, nu)
        P = np.eye(3)[None] - nn
        K = np.zeros((len(g), 3, 3))
        rhs = np.zeros((len(g), 3))
        # -sd(x) ~ g* - nu.(x - x*),  x = x_ref + du
        g_ref = g - np.einsum("ni,ni->n", nu, x_ref - x_iter)
        K[closed] += p.normal_penalty * nn[closed]
        rhs[closed] += p.normal_penalty * g_ref[closed, None] * nu[closed]
        k_t = np.where(status == STICK, p.tangential_penalty, np.where(status == SLIP, slip_stiffness, 0.0))
        tang = k_t > 0.0
        a_world = anchor + self.surface.translation(t)
        K[tang] += k_t[tang, None, None] * P[tang]
        rhs[tang] += k_t[tang, None] * np.einsum("nij,nj->ni", P[tang], a_world[tang] - x_ref[tang])
        return K, rhs

    def evaluate(self, x, t, prev_status, anchor, friction: bool, start_status=None):
        """Gap, status, forces and anchors at positions ``x`` of the candidates.

        ``anchor`` holds the committed stick anchors. Nodes that were open at
        the start of the step (``start_status``, default ``prev_status``) and
        are now closed get a fresh anchor at their projection onto the mold;
        a node that only opens in an intermediate sweep keeps its anchor.
        """
        p = self.params
        g, nu, _, _ = gap(x, self.surface, t)
        shift = self.surface.translation(t)
        anchor = anchor.copy()
        start = prev_status if start_status is None else start_status
        fresh = (start == OPEN) & (g > 0.0)
        anchor[fresh] = x[fresh] + (g[fresh, None] * nu[fresh]) - shift
        P = np.eye(3)[None] - np.einsum("ni,nj->nij", nu, nu)
        u_t = np.einsum("nij,nj->ni", P, x - (anchor + shift))
        f_n, f_t, status = contact_force(g, u_t, p, prev_status, friction)
        return ContactNodeState(status, g, u_t, f_n, f_t, anchor, nu)

    def slip_stiffness(self, state: ContactNodeState, friction: bool = True) -> np.ndarray:
        """Secant tangential stiffness ``|f_t| / |u_t|`` of slipping nodes (zero elsewhere)."""
        if not friction:
            return np.zeros(state.status.size)
        mag = np.linalg.norm(state.u_t, axis=1)
        cap = np.linalg.norm(state.f_t, axis=1)
        k = np.divide(cap, mag, out=np.full(mag.size, self.params.tangential_penalty), where=mag > 0.0)
        return np.where(state.status == SLIP, np.minimum(k, self.params.tangential_penalty), 0.0)

    def relocate_anchors(self, state: ContactNodeState, t: float) -> ContactNodeState:
        """Return-map slipping anchors so the stored spring matches the capped force."""
        st = state.copy()
        slip = st.status == SLIP
        if np.any(slip):
            stretch = -st.f_t[slip] / self.params.tangential_penalty
            st.anchor[slip] += st.u_t[slip] - stretch
            st.u_t[slip] = stretch
        return st
