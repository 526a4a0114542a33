"""Point-level thermo-viscoelastic constitutive law.

The polymer is treated as a thermorheologically simple solid: isothermal
Prony-series relaxation functions are evaluated in a reduced time obtained by
integrating a WLF shift function over the temperature history. Volume
relaxation is tracked through a fictive temperature, and the thermal strain is
split between liquid-state and glassy-state expansion at that fictive
temperature.

All hereditary integrals are carried as recursive internal variables, one per
Prony term, so the memory cost per integration point is independent of the
number of time steps. Within a step the driving quantity (strain or
temperature) is assumed to vary linearly in reduced time, for which the
exponential update is exact.

Conventions
-----------
* Temperatures are in kelvin.
* ``shear`` is the relaxation function relating the deviatoric stress tensor to
  the deviatoric strain tensor, i.e. ``2 G(t)`` for a physical shear modulus
  ``G(t)``.
* ``bulk`` relates the spherical stress ``tr(sigma)/3`` to the spherical strain
  ``tr(eps)/3`` minus the linear thermal strain, i.e. ``3 K(t)``.
* Symmetric tensors are stored as 6-vectors ``(xx, yy, zz, yz, xz, xy)`` with
  tensor (not engineering) shear components.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

# Guard band (K) kept away from the WLF pole at T - t_ref = -c2.
WLF_GUARD = 1e-6

IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


class SingularTemperatureError(ValueError):
    """Temperature at or below the pole of the WLF shift function."""


class TableRangeError(ValueError):
    """Temperature outside the tabulated thermal-expansion data."""


class MaterialCardError(ValueError):
    """Material card file is malformed or violates a property invariant."""


def ramp_factor(x):
    """Return ``(1 - exp(-x)) / x`` with the limit 1 at ``x = 0``.

    This is the weight that a strain (or temperature) ramp of reduced duration
    ``x * tau`` contributes to an exponential memory term of time constant
    ``tau``.
    """
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    return np.where(x > 0.0, -np.expm1(-safe) / safe, 1.0)


@dataclass(frozen=True)
class PronySeries:
    """Relaxation modulus ``long_term + sum_i weights[i] * exp(-t / times[i])``."""

    long_term: float
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if w.shape != t.shape or w.ndim != 1:
            raise MaterialCardError("Prony weights and relaxation times must be 1-D and of equal length")
        if np.any(t <= 0.0) or np.any(w <= 0.0):
            raise MaterialCardError("Prony weights and relaxation times must be positive")
        if self.long_term < 0.0:
            raise MaterialCardError("long-term modulus must be non-negative")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "weights", w[order])
        object.__setattr__(self, "times", t[order])
        object.__setattr__(self, "long_term", float(self.long_term))
        if self.instantaneous <= 0.0:
            raise MaterialCardError("instantaneous modulus must be positive")

    @property
    def n_terms(self) -> int:
        return self.times.size

    @property
    def instantaneous(self) -> float:
        return self.long_term + float(self.weights.sum())

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        decay = np.exp(-t[..., None] / self.times)
        return self.long_term + decay @ self.weights

    def normalized(self) -> "PronySeries":
        """Same time constants, no long-term part, weights summing to one."""
        if self.n_terms == 0:
            raise MaterialCardError("cannot normalize a Prony series without transient terms")
        return PronySeries(0.0, self.weights / self.weights.sum(), self.times)

    def scaled(self, factor: float) -> "PronySeries":
        return PronySeries(self.long_term * factor, self.weights * factor, self.times)


@dataclass(frozen=True)
class WlfShift:
    """WLF shift with ``log10 Phi = c1 (T - t_ref) / (c2 + T - t_ref)``.

    ``Phi`` is the reciprocal of the usual shift factor ``a_T``: material time
    runs faster than clock time above ``t_ref``.
    """

    c1: float
    c2: float
    t_ref: float

    def __post_init__(self):
        if not self.c2 > 0.0:
            raise MaterialCardError("WLF c2 must be positive")

    @property
    def lowest_valid_temperature(self) -> float:
        return self.t_ref - self.c2 + WLF_GUARD

    def __call__(self, T):
        return shift_factor(T, self)


def shift_factor(T, shift: WlfShift):
    """WLF shift function Phi(T); raises on or below the WLF pole."""
    T = np.asarray(T, dtype=float)
    dT = T - shift.t_ref
    if np.any(dT <= -shift.c2 + WLF_GUARD):
        bad = float(np.min(T))
        raise SingularTemperatureError(
            f"T = {bad:.6g} K is at or below the WLF pole t_ref - c2 = {shift.t_ref - shift.c2:.6g} K"
        )
    return 10.0 ** (shift.c1 * dT / (shift.c2 + dT))


def reduced_time_increment(T_old, T_new, dt, shift: WlfShift):
    """Trapezoidal increment of reduced time over a step of length ``dt``."""
    if np.any(np.asarray(dt) < 0.0):
        raise ValueError("time step must be non-negative")
    return 0.5 * dt * (shift_factor(T_old, shift) + shift_factor(T_new, shift))


@dataclass(frozen=True)
class ExpansionTable:
    """Piecewise-linear coefficient of linear thermal expansion vs temperature."""

    temperatures: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=float)
        c = np.asarray(self.coefficients, dtype=float)
        if t.ndim != 1 or t.shape != c.shape or t.size < 2:
            raise MaterialCardError("expansion table needs at least two (temperature, coefficient) knots")
        if np.any(np.diff(t) <= 0.0):
            raise MaterialCardError("expansion table temperatures must be strictly increasing")
        if not np.all(np.isfinite(c)):
            raise MaterialCardError("expansion coefficients must be finite")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * np.diff(t))])
        object.__setattr__(self, "temperatures", t)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "_cumulative", cum)

    @classmethod
    def constant(cls, alpha: float, t_lo: float = 0.0, t_hi: float = 2000.0) -> "ExpansionTable":
        return cls(np.array([t_lo, t_hi]), np.array([alpha, alpha]))

    def __call__(self, T):
        return np.interp(T, self.temperatures, self.coefficients)

    def antiderivative(self, T):
        """Exact integral of the coefficient from the first knot to ``T``."""
        t, c = self.temperatures, self.coefficients
        T = np.asarray(T, dtype=float)
        tol = 1e-9 * max(1.0, abs(t[-1]))
        if np.any(T < t[0] - tol) or np.any(T > t[-1] + tol):
            raise TableRangeError(
                f"temperature range [{np.min(T):.6g}, {np.max(T):.6g}] K leaves the expansion table "
                f"[{t[0]:.6g}, {t[-1]:.6g}] K"
            )
        idx = np.clip(np.searchsorted(t, T, side="right") - 1, 0, t.size - 2)
        d = T - t[idx]
        slope = (c[idx + 1] - c[idx]) / (t[idx + 1] - t[idx])
        return self._cumulative[idx] + c[idx] * d + 0.5 * slope * d * d

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)


@dataclass(frozen=True)
class ThermalExpansion:
    liquid: ExpansionTable
    glassy: ExpansionTable


@dataclass(frozen=True)
class MaterialCard:
    density: float
    heat_capacity: float
    conductivity: float
    glass_transition: float
    shear: PronySeries
    bulk: PronySeries
    shift: WlfShift
    expansion: ThermalExpansion
    volume: PronySeries | None = None
    name: str = ""

    def __post_init__(self):
        for key in ("density", "heat_capacity", "conductivity", "glass_transition"):
            if not getattr(self, key) > 0.0:
                raise MaterialCardError(f"{key} must be positive")
        vol = self.volume if self.volume is not None else self.shear.normalized()
        if vol.long_term != 0.0 or abs(vol.weights.sum() - 1.0) > 1e-12:
            raise MaterialCardError("volume relaxation weights must sum to one with no long-term part")
        object.__setattr__(self, "volume", vol)

    @property
    def diffusivity(self) -> float:
        return self.conductivity / (self.density * self.heat_capacity)


@dataclass
class PointState:
    """History carried at each integration point (arrays over ``n`` points)."""

    reduced_time: np.ndarray
    fictive_temperature: np.ndarray
    thermal_strain: np.ndarray
    initial_temperature: np.ndarray
    last_temperature: np.ndarray
    strain: np.ndarray            # (n, 6) total small strain, tensor shear
    dev_internal: np.ndarray      # (n, n_shear, 6)
    vol_internal: np.ndarray      # (n, n_bulk)
    fict_internal: np.ndarray     # (n, n_volume), kelvin

    @classmethod
    def initial(cls, n: int, card: MaterialCard, T0) -> "PointState":
        T0 = np.broadcast_to(np.asarray(T0, dtype=float), (n,)).copy()
        return cls(
            reduced_time=np.zeros(n),
            fictive_temperature=T0.copy(),
            thermal_strain=np.zeros(n),
            initial_temperature=T0.copy(),
            last_temperature=T0.copy(),
            strain=np.zeros((n, 6)),
            dev_internal=np.zeros((n, card.shear.n_terms, 6)),
            vol_internal=np.zeros((n, card.bulk.n_terms)),
            fict_internal=np.zeros((n, card.volume.n_terms)),
        )

    @property
    def n_points(self) -> int:
        return self.reduced_time.size

    def copy(self) -> "PointState":
        return PointState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self.__dict__)

    def stress(self, card: MaterialCard):
        """Current ``(deviatoric, spherical)`` stress reconstructed from the history."""
        dev = deviator(self.strain)
        s_dev = card.shear.long_term * dev + self.dev_internal.sum(axis=1)
        e_sph = spherical(self.strain)
        s_sph = card.bulk.long_term * (e_sph - self.thermal_strain) + self.vol_internal.sum(axis=1)
        return s_dev, s_sph


def spherical(tensor6):
    tensor6 = np.asarray(tensor6, dtype=float)
    return tensor6[..., :3].sum(axis=-1) / 3.0


def deviator(tensor6):
    tensor6 = np.asarray(tensor6, dtype=float)
    return tensor6 - spherical(tensor6)[..., None] * IDENTITY6


def update_fictive_temperature(state: PointState, T_new, d_xi, card: MaterialCard):
    """Advance the volume-relaxation memory and return ``(T_f, internal)``.

    ``internal[:, i]`` holds the temperature change seen through the i-th
    exponential memory term; ``T_f = T - sum_i w_i internal[:, i]``.
    """
    d_xi = np.asarray(d_xi, dtype=float)
    if np.any(d_xi < 0.0):
        raise ValueError("reduced-time increment must be non-negative")
    T_new = np.asarray(T_new, dtype=float)
    x = d_xi[..., None] / card.volume.times
    dT = (T_new - state.last_temperature)[..., None]
    q = np.exp(-x) * state.fict_internal + ramp_factor(x) * dT
    return T_new - q @ card.volume.weights, q


def thermal_strain(T, T_f, T_init, card: MaterialCard):
    """Linear thermal strain accumulated from ``T_init`` with liquid/glassy split at ``T_f``."""
    exp = card.expansion
    return exp.liquid.integral(T_init, T_f) + exp.glassy.integral(T_f, T)


def effective_moduli(d_xi, card: MaterialCard):
    """Incremental (algorithmic) shear and bulk moduli for a step of reduced length ``d_xi``."""
    d_xi = np.asarray(d_xi, dtype=float)
    g1 = card.shear.long_term + ramp_factor(d_xi[..., None] / card.shear.times) @ card.shear.weights
    g2 = card.bulk.long_term + ramp_factor(d_xi[..., None] / card.bulk.times) @ card.bulk.weights
    return g1, g2


def history_stress(state: PointState, d_xi, card: MaterialCard):
    """Stress at the end of a step with zero strain increment and zero thermal-strain increment."""
    d_xi = np.asarray(d_xi, dtype=float)
    decay1 = np.exp(-d_xi[..., None] / card.shear.times)
    decay2 = np.exp(-d_xi[..., None] / card.bulk.times)
    s_dev = card.shear.long_term * deviator(state.strain) + np.einsum(
        "...k,...kc->...c", decay1, state.dev_internal
    )
    s_sph = card.bulk.long_term * (spherical(state.strain) - state.thermal_strain) + (
        decay2 * state.vol_internal
    ).sum(axis=-1)
    return s_dev, s_sph


def stress_update(state: PointState, d_e_dev, d_e_sph, d_e_th, d_xi, card: MaterialCard):
    """Advance the hereditary stress integrals over one step.

    Parameters
    ----------
    state : PointState
        History at the start of the step (not modified).
    d_e_dev : array_like, shape (n, 6)
        Deviatoric strain increment (trace-free).
    d_e_sph : array_like, shape (n,)
        Spherical strain increment ``tr(d_eps) / 3``.
    d_e_th : array_like, shape (n,)
        Thermal strain increment.
    d_xi : array_like, shape (n,)
        Reduced-time increment.

    Returns
    -------
    s_dev, s_sph, new_state
        Deviatoric stress (n, 6), spherical stress (n,), and the advanced
        state. Temperature-related fields other than the thermal strain and
        reduced time are left for the caller to commit.
    """
    d_xi = np.asarray(d_xi, dtype=float)
    if np.any(d_xi < 0.0):
        raise ValueError("reduced-time increment must be non-negative")
    d_e_dev = np.asarray(d_e_dev, dtype=float)
    d_e_sph = np.asarray(d_e_sph, dtype=float)
    d_e_th = np.asarray(d_e_th, dtype=float)

    x1 = d_xi[..., None] / card.shear.times
    x2 = d_xi[..., None] / card.bulk.times
    h_dev = (
        np.exp(-x1)[..., None] * state.dev_internal
        + (card.shear.weights * ramp_factor(x1))[..., None] * d_e_dev[..., None, :]
    )
    drive = d_e_sph - d_e_th
    h_vol = np.exp(-x2) * state.vol_internal + card.bulk.weights * ramp_factor(x2) * drive[..., None]

    strain = state.strain + d_e_dev + d_e_sph[..., None] * IDENTITY6
    eth = state.thermal_strain + d_e_th
    new_state = replace(
        state,
        reduced_time=state.reduced_time + d_xi,
        thermal_strain=eth,
        strain=strain,
        dev_internal=h_dev,
        vol_internal=h_vol,
    )
    s_dev = card.shear.long_term * deviator(strain) + h_dev.sum(axis=-2)
    s_sph = card.bulk.long_term * (spherical(strain) - eth) + h_vol.sum(axis=-1)
    return s_dev, s_sph, new_state


# -- material card files ------------------------------------------------------


def _temperature(doc: dict, base: str, where: str) -> float:
    if f"{base}_K" in doc:
        return float(doc[f"{base}_K"])
    if f"{base}_C" in doc:
        return float(doc[f"{base}_C"]) + 273.15
    raise MaterialCardError(f"{where}: missing {base}_K or {base}_C")


def _table(doc: dict, where: str) -> ExpansionTable:
    if "temperatures_K" in doc:
        temps = np.asarray(doc["temperatures_K"], dtype=float)
    else:
        temps = np.asarray(doc["temperatures_C"], dtype=float) + 273.15
    return ExpansionTable(temps, np.asarray(doc["coefficients_per_K"], dtype=float))


def _prony(doc: dict, factor: float) -> PronySeries:
    weights = np.asarray(doc.get("weights_Pa", []), dtype=float)
    times = np.asarray(doc.get("relaxation_times_s", []), dtype=float)
    return PronySeries(doc["long_term_Pa"], weights, times).scaled(factor)


def load_schema(name: str) -> dict:
    with resources.files("hotemboss").joinpath("schemas", name).open("r") as fh:
        return json.load(fh)


def material_from_dict(doc: dict) -> MaterialCard:
    """Build a card from its JSON form (physical shear modulus G and bulk modulus K)."""
    import jsonschema

    try:
        jsonschema.validate(doc, load_schema("material.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise MaterialCardError(f"material card invalid at {where}: {exc.message}") from None

    shear = _prony(doc["shear_modulus"], 2.0)
    # A bulk entry without transient terms gives an elastic bulk response.
    bulk = _prony(doc["bulk_modulus"], 3.0)
    volume = None
    if "volume_relaxation" in doc:
        v = doc["volume_relaxation"]
        volume = PronySeries(0.0, v["weights"], v["relaxation_times_s"])
    wlf = doc["wlf"]
    exp = doc["thermal_expansion"]
    return MaterialCard(
        name=doc.get("name", ""),
        density=doc["density_kg_m3"],
        heat_capacity=doc["heat_capacity_J_kgK"],
        conductivity=doc["conductivity_W_mK"],
        glass_transition=_temperature(doc, "glass_transition", "material"),
        shear=shear,
        bulk=bulk,
        volume=volume,
        shift=WlfShift(wlf["c1"], wlf["c2_K"], _temperature(wlf, "reference_temperature", "wlf")),
        expansion=ThermalExpansion(_table(exp["liquid"], "liquid"), _table(exp["glassy"], "glassy")),
    )


def load_material_card(path) -> MaterialCard:
    with open(Path(path), "r") as fh:
        return material_from_dict(json.load(fh))


def default_pmma_card() -> MaterialCard:
    """Desk-scale PMMA card shipped with the package (4-term shear spectrum at 110 C)."""
    with resources.files("hotemboss").joinpath("data", "pmma_desk.json").open("r") as fh:
        return material_from_dict(json.load(fh))


def elastic_card(youngs: float, poisson: float, alpha: float = 0.0, density: float = 1190.0,
                 heat_capacity: float = 1450.0, conductivity: float = 0.19, name: str = "elastic") -> MaterialCard:
    """Card with a time-independent linear elastic response.

    The shear response is a single Prony term with an effectively infinite
    relaxation time, the shift function is identically one, and the liquid
    and glassy expansion coefficients are both ``alpha``.
    """
    G = youngs / (2.0 * (1.0 + poisson))
    K = youngs / (3.0 * (1.0 - 2.0 * poisson))
    expansion = ExpansionTable.constant(alpha)
    return MaterialCard(
        density=density, heat_capacity=heat_capacity, conductivity=conductivity, glass_transition=400.0,
        shear=PronySeries(0.0, [2.0 * G], [1e300]), bulk=PronySeries(3.0 * K),
        shift=WlfShift(0.0, 1e3, 300.0), expansion=ThermalExpansion(expansion, expansion), name=name,
    )
