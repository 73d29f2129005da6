"""Nine-zone thermal/electrical building model.

Thermal side: each zone obeys

    C_th,i * dtheta_i/dt = q_heat_i + q_cool_i + q_other_i
                           - sum_{j!=i} beta_ij * (theta_i - theta_j)
                           - ha_i * (theta_i - theta_air)

with zones 1..7 regular building zones (heating + cooling) and zones 8..9
server rooms (cooling only).  The model is sampled exactly (zero-order
hold) at ts hours:

    theta(k+1) = A theta(k) + B u(k) + S d(k) + eps(k)

where u = [q_heat_1..7, q_cool_1..9] (kW), d = [theta_air, q_other_1..9]
(degC, kW) and eps is an additive per-step residual in K.

Electrical side: the battery is a pure integrator in stored energy, and
grid/CHP/battery/cooling/demand/PV powers satisfy an algebraic balance.
Sign conventions: p_grid > 0 imports, p_dem <= 0 (consumption),
p_pv >= 0 (production), q_cool <= 0 (heat removal), p_bat > 0 charging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

N_ZONES = 9
N_BUILDING = 7
N_SERVER = 2
N_INPUTS = N_BUILDING + N_ZONES  # q_heat_1..7 then q_cool_1..9
N_DIST = 1 + N_ZONES  # theta_air then q_other_1..9


class ParameterError(ValueError):
    """Building parameters violate their invariants."""


class NumericalError(ArithmeticError):
    """A numerical routine produced non-finite results."""


def _frozen_array(values, shape) -> np.ndarray:
    out = np.array(values, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BoxBounds:
    """Box limits for all inputs and states.

    Battery capacity (98 kWh) and CHP capacity (199 kW) are plant data;
    the remaining limits are configuration defaults, not plant ground
    truth.  Units: kW except e_bat (kWh) and theta (degC).
    """

    p_bat: tuple[float, float] = (-50.0, 50.0)
    e_bat: tuple[float, float] = (0.0, 98.0)
    p_chp: tuple[float, float] = (0.0, 199.0)
    q_heat_zone: tuple[float, float] = (0.0, 80.0)
    q_cool_zone: tuple[float, float] = (-80.0, 0.0)
    theta: tuple[float, float] = (10.0, 35.0)
    p_buy: tuple[float, float] = (0.0, 1000.0)
    p_sell: tuple[float, float] = (0.0, 1000.0)
    q_rad: tuple[float, float] = (0.0, 1000.0)

    def __post_init__(self):
        for name in ("p_bat", "e_bat", "p_chp", "q_heat_zone", "q_cool_zone",
                     "theta", "p_buy", "p_sell", "q_rad"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ParameterError(f"bound {name}: need finite lo < hi, got {(lo, hi)}")


@dataclass(frozen=True)
class BuildingParameters:
    """Physical parameters of the 9-zone building.

    cth   -- per-zone thermal capacity, kWh/K
    beta  -- symmetric zone-to-zone heat transfer matrix, kW/K, zero diagonal
    ha    -- per-zone ambient heat transfer coefficient, kW/K
    eps_c -- cooling energy-efficiency ratio (electric power = |q_cool|/eps_c)
    c_chp -- CHP power-to-heat ratio (p_chp = c_chp * q_chp)
    ts    -- sampling time, h
    """

    cth: np.ndarray
    beta: np.ndarray
    ha: np.ndarray
    eps_c: float = 1.78
    c_chp: float = 0.677
    p_chp_max: float = 199.0
    e_bat_max: float = 98.0
    ts: float = 0.5
    bounds: BoxBounds = field(default_factory=BoxBounds)

    def __post_init__(self):
        object.__setattr__(self, "cth", _frozen_array(self.cth, (N_ZONES,)))
        object.__setattr__(self, "beta", _frozen_array(self.beta, (N_ZONES, N_ZONES)))
        object.__setattr__(self, "ha", _frozen_array(self.ha, (N_ZONES,)))
        if np.any(self.cth <= 0):
            raise ParameterError("cth must be strictly positive")
        if np.any(self.ha < 0):
            raise ParameterError("ha must be nonnegative")
        if np.any(self.beta < 0):
            raise ParameterError("beta entries must be nonnegative")
        if np.any(np.diag(self.beta) != 0.0):
            raise ParameterError("beta must have zero diagonal")
        if not np.array_equal(self.beta, self.beta.T):
            raise ParameterError("beta must be symmetric")
        if self.eps_c <= 0 or self.c_chp <= 0 or self.ts <= 0:
            raise ParameterError("eps_c, c_chp and ts must be strictly positive")

    @property
    def n_zones(self) -> int:
        return N_ZONES


def default_parameters(ts: float = 0.5) -> BuildingParameters:
    """Documented synthetic default parameter set.

    Building zones carry 20-120 kWh/K, server rooms 5-10 kWh/K; zones are
    coupled along a fixed adjacency chain 1-2-...-9 with 0.5-2 kW/K, and
    ambient coupling is 0.5-3 kW/K per zone.  Magnitudes are chosen so
    that loads land near a ~250 kW average site demand; they are NOT
    measurements of any real building.
    """
    cth = [95.0, 70.0, 120.0, 45.0, 60.0, 80.0, 35.0, 8.0, 6.0]
    chain = [1.6, 1.2, 2.0, 0.9, 1.4, 1.1, 0.6, 0.5]
    beta = np.zeros((N_ZONES, N_ZONES))
    for i, b in enumerate(chain):
        beta[i, i + 1] = beta[i + 1, i] = b
    ha = [2.4, 1.8, 2.6, 1.2, 1.6, 2.1, 0.9, 0.5, 0.5]
    return BuildingParameters(cth=cth, beta=beta, ha=ha, ts=ts)


def default_q_other() -> np.ndarray:
    """Constant heat disturbances, kW: ground losses for zones 1..7,
    internal heating for the server rooms 8..9.

    Server values are sized so the (heater-less) server rooms stay above
    their cold comfort bound in the coldest synthetic weather and run in
    a cooling regime the rest of the year.
    """
    return np.array([-2.5, -1.5, -3.5, -1.0, -2.0, -2.5, -1.0, 10.0, 11.0])


@dataclass(frozen=True)
class ThermalState:
    """Zone temperatures, degC."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_array(self.theta, (N_ZONES,)))
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("zone temperatures must be finite")


@dataclass(frozen=True)
class ElectricalState:
    """Stored battery energy, kWh."""

    e_bat: float


@dataclass(frozen=True)
class ThermalInput:
    """Per-zone heating (kW, >= 0, zones 1..7) and cooling (kW, <= 0, zones 1..9)."""

    q_heat: np.ndarray
    q_cool: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_heat", _frozen_array(self.q_heat, (N_BUILDING,)))
        object.__setattr__(self, "q_cool", _frozen_array(self.q_cool, (N_ZONES,)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q_heat, self.q_cool])


@dataclass(frozen=True)
class ElectricalInput:
    """Aggregate electrical/thermal plant inputs, kW.

    p_grid is signed (buy minus sell); the buy/sell decomposition lives
    inside the optimal control problem only.
    """

    p_grid: float
    p_chp: float
    p_bat: float
    q_rad: float
    q_cool_total: float
    q_heat_total: float


@dataclass(frozen=True)
class Disturbance:
    """Exogenous conditions for one step."""

    theta_air: float
    q_other: np.ndarray
    p_pv: float
    p_dem: float
    p_server: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_other", _frozen_array(self.q_other, (N_ZONES,)))
        object.__setattr__(self, "p_server", _frozen_array(self.p_server, (N_SERVER,)))
        if self.p_pv < 0:
            raise ValueError("p_pv must be nonnegative")
        if np.abs(self.p_server).sum() > abs(self.p_dem) + 1e-9:
            raise ValueError("server loads cannot exceed the total building load")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.theta_air], self.q_other])


@dataclass(frozen=True)
class DiscreteModel:
    """Sampled thermal dynamics theta(k+1) = a theta + b u + s d + eps."""

    a: np.ndarray
    b: np.ndarray
    s: np.ndarray
    ts: float

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen_array(self.a, (N_ZONES, N_ZONES)))
        object.__setattr__(self, "b", _frozen_array(self.b, (N_ZONES, N_INPUTS)))
        object.__setattr__(self, "s", _frozen_array(self.s, (N_ZONES, N_DIST)))


def continuous_matrices(params: BuildingParameters) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Continuous-time (Ac, Bc, Sc) of the zone dynamics.

    Ac in 1/h; Bc and Sc map kW inputs through 1/cth (K per kWh) and the
    ambient temperature through ha/cth.
    """
    cth, beta, ha = params.cth, params.beta, params.ha
    ac = beta / cth[:, None]
    np.fill_diagonal(ac, -(beta.sum(axis=1) + ha) / cth)
    bc = np.zeros((N_ZONES, N_INPUTS))
    for i in range(N_BUILDING):
        bc[i, i] = 1.0 / cth[i]
    for i in range(N_ZONES):
        bc[i, N_BUILDING + i] = 1.0 / cth[i]
    sc = np.zeros((N_ZONES, N_DIST))
    sc[:, 0] = ha / cth
    for i in range(N_ZONES):
        sc[i, 1 + i] = 1.0 / cth[i]
    return ac, bc, sc


def discretize(params: BuildingParameters) -> DiscreteModel:
    """Exact zero-order-hold sampling via the augmented matrix exponential.

    exp([[Ac, [Bc Sc]], [0, 0]] * ts) packs A in the top-left block and
    the ZOH integrals of Bc and Sc alongside.
    """
    ac, bc, sc = continuous_matrices(params)
    n_aug = N_ZONES + N_INPUTS + N_DIST
    m = np.zeros((n_aug, n_aug))
    m[:N_ZONES, :N_ZONES] = ac
    m[:N_ZONES, N_ZONES:N_ZONES + N_INPUTS] = bc
    m[:N_ZONES, N_ZONES + N_INPUTS:] = sc
    md = expm(m * params.ts)
    if not np.all(np.isfinite(md)):
        raise NumericalError("matrix exponential produced non-finite entries")
    a = md[:N_ZONES, :N_ZONES]
    b = md[:N_ZONES, N_ZONES:N_ZONES + N_INPUTS]
    s = md[:N_ZONES, N_ZONES + N_INPUTS:]
    return DiscreteModel(a=a, b=b, s=s, ts=params.ts)


def step_thermal(model: DiscreteModel, x: ThermalState, u: ThermalInput,
                 d: Disturbance, eps: np.ndarray) -> ThermalState:
    """One exact step of the sampled thermal dynamics; eps is additive in K."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (N_ZONES,):
        raise ValueError(f"eps must have shape ({N_ZONES},), got {eps.shape}")
    theta = model.a @ x.theta + model.b @ u.as_vector() + model.s @ d.as_vector() + eps
    return ThermalState(theta=theta)


def step_battery(e: ElectricalState, p_bat: float, ts: float) -> ElectricalState:
    """Battery integrator e(k+1) = e(k) + p_bat * ts (charging positive)."""
    return ElectricalState(e_bat=e.e_bat + p_bat * ts)


def balance_residual(u: ElectricalInput, d: Disturbance, eps_c: float) -> float:
    """Electrical power balance defect in kW; zero at a feasible point."""
    return (u.p_grid - u.p_bat + u.p_chp + u.q_cool_total / eps_c
            + d.p_dem + d.p_pv)


def coupling_residuals(u_th: ThermalInput, u_el: ElectricalInput, c_chp: float) -> np.ndarray:
    """Defects of the four thermal/electrical coupling equations, kW.

    Order: CHP power-to-heat, heat split (q_heat = q_rad + q_chp), heating
    sum, cooling sum.  q_chp is eliminated through the power-to-heat ratio.
    """
    q_chp = u_el.p_chp / c_chp
    return np.array([
        u_el.p_chp - c_chp * q_chp,
        u_el.q_heat_total - (u_el.q_rad + q_chp),
        u_el.q_heat_total - u_th.q_heat.sum(),
        u_el.q_cool_total - u_th.q_cool.sum(),
    ])


def eps_to_power(eps: np.ndarray, params: BuildingParameters) -> np.ndarray:
    """Report a per-step residual (K) as an equivalent heat flow (kW)."""
    return np.asarray(eps, dtype=float) * params.cth / params.ts
