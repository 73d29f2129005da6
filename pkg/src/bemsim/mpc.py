"""Receding-horizon controller: the finite-horizon OCP as a convex QP.

Decision variables per horizon step n (block size 35):

    0..6    q_heat_1..7      zone heating, kW
    7..15   q_cool_1..9      zone cooling, kW (<= 0)
    16      p_buy            grid import, kW
    17      p_sell           grid export, kW
    18      p_chp            CHP electrical power, kW
    19      p_bat            battery charging power, kW
    20      q_rad            boiler heat, kW
    21..22  s_lo_8, s_lo_9   server cold-side slack, K
    23..24  s_hi_8, s_hi_9   server warm-side slack, K
    25..33  theta_1..9(n+1)  zone temperatures, degC
    34      e_bat(n+1)       stored energy, kWh

plus one global epigraph variable p_peak >= p_buy(n) for all n.

Costs: quadratic comfort tracking of the 22 degC reference for zones
1..7 (capacity weights), linear band slacks for the server zones, and a
linear monetary term (energy buy/sell, gas for boiler and CHP, and a
per-horizon peak price on p_peak).  Dynamics, battery, power balance,
the CHP heat split and all box bounds are linear constraints, so the
whole OCP is a sparse QP with constant matrices; only right-hand sides
move between solves, which the controller exploits by caching the
factorized solver and warm-starting from the previous solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .building import (N_BUILDING, N_INPUTS, N_SERVER, N_ZONES, BoxBounds,
                       BuildingParameters, DiscreteModel, ElectricalInput,
                       ElectricalState, ThermalInput, ThermalState,
                       default_q_other, _frozen_array)
from .datagen import TimeSeriesFrame
from .qp import (INFEASIBLE, MAX_ITER, OPTIMAL, InteriorPointQp, QpProblem,
                 QpSolution, kkt_residuals)

logger = logging.getLogger(__name__)

N_VARS_STEP = 35
_Q_HEAT = slice(0, 7)
_Q_COOL = slice(7, 16)
_P_BUY, _P_SELL, _P_CHP, _P_BAT, _Q_RAD = 16, 17, 18, 19, 20
_S_LO = slice(21, 23)
_S_HI = slice(23, 25)
_THETA = slice(25, 34)
_E_BAT = 34


def zone_weights(params: BuildingParameters) -> tuple[np.ndarray, np.ndarray]:
    """Capacity-derived objective weights for building and server zones."""
    cth = params.cth
    wthb = cth[:N_BUILDING] / cth[:N_BUILDING].sum()
    wths = cth[N_BUILDING:] / cth[N_BUILDING:].sum()
    return wthb, wths


@dataclass(frozen=True)
class OcpConfig:
    """Horizon, weights, prices and bounds of the optimal control problem.

    The monetary term and its constants (prices, efficiencies, horizon
    peak price) are configuration defaults, not plant data.
    """

    np_steps: int = 48
    w_comf: float = 0.99
    w_server: float = 1.0
    w_mon: float = 0.01
    ref_comfort: float = 22.0
    server_lo: float = 15.0
    server_hi: float = 21.0
    wthb: np.ndarray = None
    wths: np.ndarray = None
    c_buy: float = 0.30     # EUR/kWh
    c_sell: float = 0.08    # EUR/kWh
    c_gas: float = 0.13     # EUR/kWh fuel; keeps CHP power slightly above grid parity
    c_peak: float = 0.05    # EUR/kW per horizon
    eta_boiler: float = 0.9
    eta_chp_el: float = 0.38
    ts: float = 0.5
    eps_c: float = 1.78
    c_chp: float = 0.677
    q_other: np.ndarray = None
    bounds: BoxBounds = field(default_factory=BoxBounds)
    solver_eps: float = 1e-6
    solver_max_iter: int = 60
    # optional curvature on the cost-degenerate power/slack coordinates in
    # the controller's solver copy of the cost (reported objectives always
    # use the pure cost); the interior-point path does not need it
    solver_reg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "wthb", _frozen_array(self.wthb, (N_BUILDING,)))
        object.__setattr__(self, "wths", _frozen_array(self.wths, (N_SERVER,)))
        object.__setattr__(self, "q_other", _frozen_array(self.q_other, (N_ZONES,)))
        if self.np_steps < 1:
            raise ValueError("horizon must be at least one step")
        if abs(self.wthb.sum() - 1.0) > 1e-9 or abs(self.wths.sum() - 1.0) > 1e-9:
            raise ValueError("zone weights must each sum to one")
        if min(self.c_buy, self.c_sell, self.c_gas, self.c_peak) < 0:
            raise ValueError("prices must be nonnegative")


def make_ocp_config(params: BuildingParameters, q_other: np.ndarray | None = None,
                    **overrides) -> OcpConfig:
    wthb, wths = zone_weights(params)
    return OcpConfig(wthb=wthb, wths=wths, ts=params.ts, eps_c=params.eps_c,
                     c_chp=params.c_chp,
                     q_other=default_q_other() if q_other is None else q_other,
                     bounds=params.bounds, **overrides)


@dataclass
class OcpSolution:
    """Solved OCP with the per-term objective breakdown."""

    u_all: np.ndarray
    objective: float
    j_comf: float
    j_server: float
    j_mon: float
    status: str
    iterations: int
    kkt: dict
    failsafe: bool = False


class OcpBuilder:
    """Constant QP data for a fixed (config, model) pair."""

    def __init__(self, cfg: OcpConfig, model: DiscreteModel):
        self.cfg = cfg
        self.model = model
        self.np_steps = cfg.np_steps
        self.n = N_VARS_STEP * cfg.np_steps + 1
        self.i_peak = N_VARS_STEP * cfg.np_steps
        self.n_eq = 12 * cfg.np_steps
        self.n_ineq = 5 * cfg.np_steps
        self.m = self.n_eq + self.n_ineq + self.n
        self._s_qother = model.s[:, 1:] @ cfg.q_other
        self._build_cost()
        self._build_constraints()
        self._build_rhs_template()

    def _build_cost(self):
        cfg = self.cfg
        pd = np.zeros(self.n)
        q = np.zeros(self.n)
        for k in range(self.np_steps):
            o = k * N_VARS_STEP
            th = o + _THETA.start
            pd[th:th + N_BUILDING] = 2.0 * cfg.w_comf * cfg.wthb
            q[th:th + N_BUILDING] = -2.0 * cfg.w_comf * cfg.wthb * cfg.ref_comfort
            q[o + _S_LO.start:o + _S_LO.stop] = cfg.w_server * cfg.wths
            q[o + _S_HI.start:o + _S_HI.stop] = cfg.w_server * cfg.wths
            q[o + _P_BUY] = cfg.w_mon * cfg.c_buy * cfg.ts
            q[o + _P_SELL] = -cfg.w_mon * cfg.c_sell * cfg.ts
            q[o + _P_CHP] = cfg.w_mon * cfg.c_gas * cfg.ts / cfg.eta_chp_el
            q[o + _Q_RAD] = cfg.w_mon * cfg.c_gas * cfg.ts / cfg.eta_boiler
        q[self.i_peak] = cfg.w_mon * cfg.c_peak
        self.p = sp.diags(pd).tocsc()
        self.q = q
        reg = np.zeros(self.n)
        for k in range(self.np_steps):
            o = k * N_VARS_STEP
            reg[o + _P_BUY:o + _Q_RAD + 1] = cfg.solver_reg
            reg[o + _S_LO.start:o + _S_HI.stop] = cfg.solver_reg
        reg[self.i_peak] = cfg.solver_reg
        self.p_solver = sp.diags(pd + reg).tocsc()

    def _build_constraints(self):
        cfg, model = self.cfg, self.model
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(float(v))

        for k in range(self.np_steps):
            o = k * N_VARS_STEP
            eq = 12 * k
            # dynamics: theta(k+1) - A theta(k) - B u = S d + eps_hat
            for i in range(N_ZONES):
                r = eq + i
                add(r, o + _THETA.start + i, 1.0)
                for j in range(N_INPUTS):
                    if model.b[i, j] != 0.0:
                        add(r, o + j, -model.b[i, j])
                if k > 0:
                    po = (k - 1) * N_VARS_STEP
                    for j in range(N_ZONES):
                        if model.a[i, j] != 0.0:
                            add(r, po + _THETA.start + j, -model.a[i, j])
            # battery: e(k+1) - e(k) - ts p_bat = 0
            r = eq + 9
            add(r, o + _E_BAT, 1.0)
            add(r, o + _P_BAT, -cfg.ts)
            if k > 0:
                add(r, (k - 1) * N_VARS_STEP + _E_BAT, -1.0)
            # balance: p_buy - p_sell - p_bat + p_chp + sum(q_cool)/eps_c = -(p_dem+p_pv)
            r = eq + 10
            add(r, o + _P_BUY, 1.0)
            add(r, o + _P_SELL, -1.0)
            add(r, o + _P_BAT, -1.0)
            add(r, o + _P_CHP, 1.0)
            for j in range(N_ZONES):
                add(r, o + _Q_COOL.start + j, 1.0 / cfg.eps_c)
            # heat split: sum(q_heat) - q_rad - p_chp/c_chp = 0
            r = eq + 11
            for j in range(N_BUILDING):
                add(r, o + j, 1.0)
            add(r, o + _Q_RAD, -1.0)
            add(r, o + _P_CHP, -1.0 / cfg.c_chp)
            # inequalities
            iq = self.n_eq + 5 * k
            for j in range(N_SERVER):
                add(iq + j, o + _THETA.start + N_BUILDING + j, 1.0)
                add(iq + j, o + _S_LO.start + j, 1.0)
                add(iq + 2 + j, o + _THETA.start + N_BUILDING + j, 1.0)
                add(iq + 2 + j, o + _S_HI.start + j, -1.0)
            add(iq + 4, self.i_peak, 1.0)
            add(iq + 4, o + _P_BUY, -1.0)
        for j in range(self.n):
            add(self.n_eq + self.n_ineq + j, j, 1.0)
        self.a = sp.coo_matrix((vals, (rows, cols)), shape=(self.m, self.n)).tocsc()
        # structured pieces for the interior-point path: equality block and
        # one-sided inequalities A_in x <= g (lower-sided rows are flipped)
        a_rows = sp.csr_matrix(self.a)
        self.a_eq = a_rows[:self.n_eq]
        self._in_signs = np.tile([-1.0, -1.0, 1.0, 1.0, -1.0], self.np_steps)
        self.a_in = sp.diags(self._in_signs) @ a_rows[self.n_eq:self.n_eq + self.n_ineq]

    def _build_rhs_template(self):
        cfg = self.cfg
        b = cfg.bounds
        inf = np.inf
        l = np.zeros(self.m)
        u = np.zeros(self.m)
        # equality rows filled per solve; inequality rows constant
        for k in range(self.np_steps):
            iq = self.n_eq + 5 * k
            l[iq:iq + 2] = cfg.server_lo
            u[iq:iq + 2] = inf
            l[iq + 2:iq + 4] = -inf
            u[iq + 2:iq + 4] = cfg.server_hi
            l[iq + 4] = 0.0
            u[iq + 4] = inf
        box = np.zeros((N_VARS_STEP, 2))
        box[_Q_HEAT] = b.q_heat_zone
        box[_Q_COOL] = b.q_cool_zone
        box[_P_BUY] = b.p_buy
        box[_P_SELL] = b.p_sell
        box[_P_CHP] = b.p_chp
        box[_P_BAT] = b.p_bat
        box[_Q_RAD] = b.q_rad
        box[_S_LO] = (0.0, inf)
        box[_S_HI] = (0.0, inf)
        box[_THETA] = b.theta
        box[_E_BAT] = b.e_bat
        boxes = np.tile(box, (self.np_steps, 1))
        o = self.n_eq + self.n_ineq
        l[o:o + boxes.shape[0]] = boxes[:, 0]
        u[o:o + boxes.shape[0]] = boxes[:, 1]
        l[o + self.i_peak] = 0.0
        u[o + self.i_peak] = inf
        self._l0, self._u0 = l, u
        # index arrays for the per-solve updates
        steps = np.arange(self.np_steps)
        self._dyn_rows = (12 * steps[:, None] + np.arange(N_ZONES)[None, :]).ravel()
        self._bal_rows = 12 * steps + 10
        self._bat0_row = 9

    def rhs(self, x0: np.ndarray, e0: float, forecast: TimeSeriesFrame,
            eps_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bounds vectors for the given initial state, forecast and residual
        estimates (eps_hat is (np_steps, 9) in K)."""
        if forecast.n < self.np_steps:
            raise ValueError(f"forecast must cover {self.np_steps} steps")
        eps_hat = np.asarray(eps_hat, dtype=float)
        if eps_hat.shape != (self.np_steps, N_ZONES):
            raise ValueError(f"eps_hat must be ({self.np_steps}, {N_ZONES})")
        if not np.all(np.isfinite(eps_hat)):
            raise ValueError("eps_hat must be finite")
        sl = slice(0, self.np_steps)
        dyn = (forecast.theta_air[sl, None] * self.model.s[None, :, 0]
               + self._s_qother[None, :] + eps_hat)
        dyn[0] += self.model.a @ x0
        bal = -(forecast.p_dem[sl] + forecast.p_pv[sl])
        l = self._l0.copy()
        l[self._dyn_rows] = dyn.ravel()
        l[self._bal_rows] = bal
        l[self._bat0_row] = e0
        u = l.copy()
        u[self.n_eq:] = self._u0[self.n_eq:]
        l[self.n_eq:] = self._l0[self.n_eq:]
        return l, u

    def problem(self, x0, e0, forecast, eps_hat) -> QpProblem:
        l, u = self.rhs(np.asarray(x0, dtype=float), float(e0), forecast, eps_hat)
        return QpProblem(p=self.p, q=self.q, a=self.a, l=l, u=u)

    def structured_rhs(self, l: np.ndarray, u: np.ndarray):
        """(b, g, lb, ub) for the interior-point formulation."""
        b = l[:self.n_eq]
        sl = slice(self.n_eq, self.n_eq + self.n_ineq)
        g = np.where(self._in_signs > 0, u[sl], -l[sl])
        box = slice(self.n_eq + self.n_ineq, self.m)
        return b, g, l[box], u[box]

    def breakdown(self, x: np.ndarray) -> tuple[float, float, float]:
        """(j_comf, j_server, j_mon) evaluated on a decision vector."""
        cfg = self.cfg
        blocks = x[:self.i_peak].reshape(self.np_steps, N_VARS_STEP)
        theta_b = blocks[:, _THETA][:, :N_BUILDING]
        j_comf = float(np.sum((theta_b - cfg.ref_comfort) ** 2 @ cfg.wthb))
        slack = blocks[:, _S_LO] + blocks[:, _S_HI]
        j_server = float(np.sum(slack @ cfg.wths))
        j_mon = float(np.sum(
            cfg.c_buy * blocks[:, _P_BUY] - cfg.c_sell * blocks[:, _P_SELL]
            + cfg.c_gas * (blocks[:, _Q_RAD] / cfg.eta_boiler
                           + blocks[:, _P_CHP] / cfg.eta_chp_el)) * cfg.ts
            + cfg.c_peak * x[self.i_peak])
        return j_comf, j_server, j_mon

    def solution(self, qp: QpSolution) -> OcpSolution:
        j_comf, j_server, j_mon = self.breakdown(qp.x)
        total = (self.cfg.w_comf * j_comf + self.cfg.w_server * j_server
                 + self.cfg.w_mon * j_mon)
        return OcpSolution(u_all=qp.x, objective=total, j_comf=j_comf,
                           j_server=j_server, j_mon=j_mon, status=qp.status,
                           iterations=qp.iterations, kkt=qp.kkt)


def build_ocp(cfg: OcpConfig, model: DiscreteModel, x0: ThermalState,
              e0: ElectricalState, forecast: TimeSeriesFrame,
              eps_hat: np.ndarray) -> QpProblem:
    """One-shot OCP assembly (tests and external verification)."""
    return OcpBuilder(cfg, model).problem(x0.theta, e0.e_bat, forecast, eps_hat)


class MpcController:
    """Stateful receding-horizon controller with a cached QP factorization."""

    def __init__(self, cfg: OcpConfig, model: DiscreteModel):
        self.cfg = cfg
        self.model = model
        self.builder = OcpBuilder(cfg, model)
        self.solver = InteriorPointQp(self.builder.p_solver, self.builder.a_eq,
                                      self.builder.a_in)
        self._warm = None
        self._perms = self._shift_permutations()
        self.failsafe_count = 0
        self.inaccurate_count = 0

    def _shift_permutations(self) -> dict:
        """Index maps that advance a solution by one horizon step (the last
        block repeats), used to warm start the next solve."""
        b = self.builder
        nsteps = self.cfg.np_steps

        def block_shift(width: int, count: int, offset: int = 0) -> np.ndarray:
            src = np.arange(count * width).reshape(count, width)
            shifted = np.vstack([src[1:], src[-1:]])
            return shifted.ravel() + offset

        perm_x = np.empty(b.n, dtype=int)
        perm_x[:nsteps * N_VARS_STEP] = block_shift(N_VARS_STEP, nsteps)
        perm_x[b.i_peak] = b.i_peak
        return {"x": perm_x, "eq": block_shift(12, nsteps),
                "in": block_shift(5, nsteps)}

    def step(self, x: ThermalState, e: ElectricalState, frame: TimeSeriesFrame,
             k: int, eps_hat: np.ndarray
             ) -> tuple[ThermalInput, ElectricalInput, OcpSolution]:
        forecast = frame.window(k, self.cfg.np_steps)
        l, u = self.builder.rhs(x.theta, e.e_bat, forecast, eps_hat)
        b_eq, g, lb, ub = self.builder.structured_rhs(l, u)
        res = self.solver.solve(self.builder.q, b_eq, g, lb, ub, warm=self._warm,
                                tol=self.cfg.solver_eps,
                                max_iter=self.cfg.solver_max_iter)
        if res["status"] != OPTIMAL and self._warm is not None:
            res = self.solver.solve(self.builder.q, b_eq, g, lb, ub, warm=None,
                                    tol=self.cfg.solver_eps,
                                    max_iter=self.cfg.solver_max_iter)
        qp = self._as_qp_solution(res, l, u)
        i = frame.loc(k)
        usable = np.all(np.isfinite(qp.x)) and qp.kkt["primal"] <= 1e-3
        if qp.status == INFEASIBLE or not usable:
            self.failsafe_count += 1
            logger.warning("OCP solve returned %s at step %d; applying failsafe",
                           qp.status, k)
            return self._failsafe(frame, i, qp)
        if qp.status == MAX_ITER:
            # near-feasible best iterate is still a usable plan; the input
            # repair keeps what gets applied exactly consistent
            self.inaccurate_count += 1
            logger.warning("OCP solve hit the iteration cap at step %d "
                           "(kkt %s); applying best iterate", k, qp.kkt)
        p = self._perms
        self._warm = {"x": res["x"][p["x"]], "y": res["y"][p["eq"]],
                      "z": res["z"][p["in"]], "zl": res["zl"][p["x"]],
                      "zu": res["zu"][p["x"]]}
        sol = self.builder.solution(qp)
        u_th, u_el = self._first_inputs(qp.x, e, frame, i)
        return u_th, u_el, sol

    def _as_qp_solution(self, res: dict, l: np.ndarray, u: np.ndarray) -> QpSolution:
        """Assemble row duals over the full constraint matrix and report KKT
        residuals of the pure (unregularized) problem."""
        b = self.builder
        y = np.empty(b.m)
        y[:b.n_eq] = res["y"]
        y[b.n_eq:b.n_eq + b.n_ineq] = b._in_signs * res["z"]
        y[b.n_eq + b.n_ineq:] = res["zu"] - res["zl"]
        x = res["x"]
        ax = b.a @ x
        z = np.clip(ax, l, u)
        sol = QpSolution(x=x, y=y, z=z, status=res["status"],
                         objective=float(0.5 * x @ (b.p @ x) + b.q @ x),
                         iterations=res["iterations"])
        sol.kkt = kkt_residuals(b.p, b.a, x, y, b.q, l, u)
        return sol

    def _first_inputs(self, xvec: np.ndarray, e: ElectricalState,
                      frame: TimeSeriesFrame, i: int
                      ) -> tuple[ThermalInput, ElectricalInput]:
        """Extract the first-step input and repair solver-tolerance drift so
        couplings and the power balance hold exactly."""
        cfg = self.cfg
        b = cfg.bounds
        blk = xvec[:N_VARS_STEP]
        q_heat = np.clip(blk[_Q_HEAT], b.q_heat_zone[0], b.q_heat_zone[1])
        q_cool = np.clip(blk[_Q_COOL], b.q_cool_zone[0], b.q_cool_zone[1])
        p_chp = float(np.clip(blk[_P_CHP], b.p_chp[0], b.p_chp[1]))
        lo = max(b.p_bat[0], (b.e_bat[0] - e.e_bat) / cfg.ts)
        hi = min(b.p_bat[1], (b.e_bat[1] - e.e_bat) / cfg.ts)
        p_bat = float(np.clip(blk[_P_BAT], lo, hi))
        q_heat_total = float(q_heat.sum())
        q_cool_total = float(q_cool.sum())
        q_chp = p_chp / cfg.c_chp
        if q_chp > q_heat_total:
            q_chp = q_heat_total
            p_chp = cfg.c_chp * q_chp
            q_rad = 0.0
        else:
            q_rad = q_heat_total - q_chp
        p_grid = (p_bat - p_chp - q_cool_total / cfg.eps_c
                  - frame.p_dem[i] - frame.p_pv[i])
        u_th = ThermalInput(q_heat=q_heat, q_cool=q_cool)
        u_el = ElectricalInput(p_grid=p_grid, p_chp=p_chp, p_bat=p_bat, q_rad=q_rad,
                               q_cool_total=q_cool_total, q_heat_total=q_heat_total)
        return u_th, u_el

    def _failsafe(self, frame: TimeSeriesFrame, i: int, qp: QpSolution | None
                  ) -> tuple[ThermalInput, ElectricalInput, OcpSolution]:
        """Zero thermal actuation plus a balance-feasible grid exchange."""
        u_th = ThermalInput(q_heat=np.zeros(N_BUILDING), q_cool=np.zeros(N_ZONES))
        p_grid = -(frame.p_dem[i] + frame.p_pv[i])
        u_el = ElectricalInput(p_grid=float(p_grid), p_chp=0.0, p_bat=0.0, q_rad=0.0,
                               q_cool_total=0.0, q_heat_total=0.0)
        sol = OcpSolution(u_all=qp.x if qp is not None else np.zeros(self.builder.n),
                          objective=float("nan"), j_comf=float("nan"),
                          j_server=float("nan"), j_mon=float("nan"),
                          status=qp.status if qp is not None else MAX_ITER,
                          iterations=qp.iterations if qp is not None else 0,
                          kkt=qp.kkt if qp is not None else {}, failsafe=True)
        return u_th, u_el, sol


def horizon_estimates(estimators: dict, frame: TimeSeriesFrame, k: int,
                      np_steps: int) -> np.ndarray:
    """Evaluate the residual estimators on (perfectly predicted) features
    over the horizon; steps without lag history get zero."""
    from .features import BUILDING, SERVER, feature_matrix
    out = np.zeros((np_steps, N_ZONES))
    lo = max(k, frame.start + 2)
    if lo >= k + np_steps:
        return out
    ks = np.arange(lo, k + np_steps)
    sl = slice(lo - k, np_steps)
    out[sl, :N_BUILDING] = estimators[BUILDING].predict(
        feature_matrix(frame, ks, BUILDING))
    out[sl, N_BUILDING:] = estimators[SERVER].predict(
        feature_matrix(frame, ks, SERVER))
    return out


def mpc_step(cfg: OcpConfig, model: DiscreteModel, x: ThermalState,
             e: ElectricalState, frame: TimeSeriesFrame, k: int,
             eps_hat: np.ndarray | None = None, estimators: dict | None = None
             ) -> tuple[ThermalInput, ElectricalInput, OcpSolution]:
    """Single receding-horizon step without controller state.

    Residual estimates come either as a precomputed (np_steps, 9) array or
    from trained estimators evaluated on horizon features; absent both,
    no error compensation is applied.
    """
    if eps_hat is None:
        if estimators is not None:
            eps_hat = horizon_estimates(estimators, frame, k, cfg.np_steps)
        else:
            eps_hat = np.zeros((cfg.np_steps, N_ZONES))
    return MpcController(cfg, model).step(x, e, frame, k, eps_hat)
