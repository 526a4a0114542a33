"""History generators and drivers shared by the material tests."""
from __future__ import annotations

import numpy as np

from hotemboss.material import (
    PointState,
    deviator,
    reduced_time_increment,
    spherical,
    stress_update,
    thermal_strain,
    update_fictive_temperature,
)


def random_history(rng, card, n_steps, t_lo=345.0, t_hi=430.0):
    """Random temperature walk, step sizes and strain increments.

    Returns ``(dt, T, d_eps)`` with ``T`` of length ``n_steps + 1`` and
    ``d_eps`` of shape ``(n_steps, 6)`` (tensor shear components).
    """
    dt = 10.0 ** rng.uniform(-3.0, 1.0, n_steps)
    T = np.empty(n_steps + 1)
    T[0] = rng.uniform(t_lo, t_hi)
    for k in range(n_steps):
        T[k + 1] = np.clip(T[k] + rng.normal(0.0, 6.0), t_lo, t_hi)
    d_eps = rng.normal(0.0, 1e-3, (n_steps, 6))
    return dt, T, d_eps


def run_recursive(card, dt, T, d_eps):
    """Drive the recursive update along a history at a single point.

    Returns a dict with the reduced-time nodes, fictive temperature, thermal
    strain and stress (deviatoric (n+1, 6), spherical (n+1,)) at every node.
    """
    n = len(dt)
    state = PointState.initial(1, card, T[0])
    xi = np.zeros(n + 1)
    tf = np.full(n + 1, T[0])
    eth = np.zeros(n + 1)
    s_dev = np.zeros((n + 1, 6))
    s_sph = np.zeros(n + 1)
    for k in range(n):
        d_xi = np.atleast_1d(reduced_time_increment(T[k], T[k + 1], dt[k], card.shift))
        T_f, q = update_fictive_temperature(state, np.array([T[k + 1]]), d_xi, card)
        e_th = thermal_strain(T[k + 1], T_f, state.initial_temperature, card)
        de = d_eps[k][None, :]
        sd, ss, state = stress_update(state, deviator(de), spherical(de), e_th - state.thermal_strain, d_xi, card)
        state.fictive_temperature, state.fict_internal = T_f, q
        state.last_temperature = np.array([T[k + 1]])
        xi[k + 1] = state.reduced_time[0]
        tf[k + 1], eth[k + 1] = T_f[0], e_th[0]
        s_dev[k + 1], s_sph[k + 1] = sd[0], ss[0]
    return {"xi": xi, "T_f": tf, "e_th": eth, "s_dev": s_dev, "s_sph": s_sph}
