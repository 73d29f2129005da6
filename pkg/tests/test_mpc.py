import numpy as np
import pytest
from dataclasses import replace

from bemsim.building import (BuildingParameters, Disturbance, ElectricalState,
                             N_ZONES, ThermalState, balance_residual,
                             coupling_residuals, default_parameters,
                             default_q_other)
from bemsim.datagen import TimeSeriesFrame
from bemsim.mpc import (MpcController, OcpBuilder, build_ocp, make_ocp_config,
                        mpc_step, zone_weights)
from bemsim.qp import OPTIMAL, solve_qp


def flat_frame(n=120, theta_air=10.0, p_dem=-200.0, p_pv=0.0, start=0):
    """Constant exogenous conditions for controller tests."""
    server = min(40.0, -p_dem / 2.0)
    return TimeSeriesFrame(
        start=start, ts=0.5, theta_air=np.full(n, theta_air),
        p_pv=np.full(n, p_pv), p_dem=np.full(n, p_dem),
        p_server=np.full((n, 2), server), tod=np.tile(np.arange(48) * 0.5,
                                                      n // 48 + 1)[:n],
        dow=np.zeros(n))


class TestZoneWeights:
    def test_equal_capacities_uniform(self):
        p = default_parameters()
        cth = p.cth.copy()
        cth[:7] = 50.0
        p = BuildingParameters(cth=cth, beta=p.beta, ha=p.ha)
        wthb, _ = zone_weights(p)
        assert np.allclose(wthb, 1 / 7)

    def test_hand_value(self):
        p = default_parameters()
        cth = p.cth.copy()
        cth[:7] = [2, 1, 1, 1, 1, 1, 1]
        p = BuildingParameters(cth=cth, beta=p.beta, ha=p.ha)
        wthb, _ = zone_weights(p)
        assert wthb[0] == pytest.approx(0.25)

    def test_equal_server_capacities(self):
        p = default_parameters()
        cth = p.cth.copy()
        cth[7:] = 6.0
        p = BuildingParameters(cth=cth, beta=p.beta, ha=p.ha)
        _, wths = zone_weights(p)
        assert np.allclose(wths, 0.5)


@pytest.fixture(scope="module")
def cfg(params):
    return make_ocp_config(params)


@pytest.fixture(scope="module")
def eps0(cfg):
    return np.zeros((cfg.np_steps, N_ZONES))


class TestBuildOcp:
    def test_equilibrium_has_zero_comfort_cost(self, params, model, cfg, eps0):
        # no ambient losses, zones at the reference, free heat balance:
        # nothing to do and nothing to pay for staying put
        p_free = BuildingParameters(cth=params.cth,
                                    beta=np.zeros((N_ZONES, N_ZONES)),
                                    ha=np.zeros(N_ZONES))
        from bemsim.building import discretize
        m_free = discretize(p_free)
        cfg_free = make_ocp_config(p_free, q_other=np.zeros(N_ZONES),
                                   c_buy=0.0, c_sell=0.0, c_gas=0.0, c_peak=0.0)
        frame = flat_frame(p_dem=0.0)
        x0 = ThermalState(theta=np.full(N_ZONES, 22.0))
        prob = build_ocp(cfg_free, m_free, x0, ElectricalState(e_bat=49.0),
                         frame.window(0, cfg_free.np_steps), eps0)
        s = solve_qp(prob)
        assert s.status == OPTIMAL
        b = OcpBuilder(cfg_free, m_free)
        j_comf, j_server, j_mon = b.breakdown(s.x)
        total = (cfg_free.w_comf * j_comf + cfg_free.w_server * j_server
                 + cfg_free.w_mon * j_mon)
        assert total == pytest.approx(0.0, abs=1e-6)
        assert j_comf == pytest.approx(0.0, abs=1e-6)

    def test_objective_breakdown_sums_to_total(self, params, model, cfg, eps0,
                                               frame):
        x0 = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 20.5]]))
        ctrl = MpcController(cfg, model)
        u_th, u_el, sol = ctrl.step(x0, ElectricalState(e_bat=49.0), frame, 10,
                                    eps0)
        total = (cfg.w_comf * sol.j_comf + cfg.w_server * sol.j_server
                 + cfg.w_mon * sol.j_mon)
        assert sol.objective == pytest.approx(total, abs=1e-9)

    def test_breakdown_hand_values(self, params, model):
        # one comfort term: zone at 23 with full weight contributes 1 K^2;
        # one server term: zone at 22 contributes 1 K via the warm slack
        cfg1 = make_ocp_config(params, np_steps=1, c_buy=0.0, c_sell=0.0,
                               c_gas=0.0, c_peak=0.0)
        b = OcpBuilder(cfg1, model)
        x = np.zeros(b.n)
        x[25:34] = 22.0   # predicted temperatures at n=1
        x[25] = 23.0      # building zone 1 one kelvin high
        x[32] = 22.0      # server zone 8 one kelvin above the band
        x[23] = 1.0       # s_hi_8 at its exact value
        j_comf, j_server, j_mon = b.breakdown(x)
        assert j_comf == pytest.approx(cfg1.wthb[0] * 1.0, abs=1e-12)
        assert j_server == pytest.approx(cfg1.wths[0] * 1.0, abs=1e-12)
        assert j_mon == 0.0

    def test_horizon_of_one_solves(self, params, model):
        cfg1 = make_ocp_config(params, np_steps=1)
        frame = flat_frame(n=4)
        x = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 20.5]]))
        prob = build_ocp(cfg1, model, x, ElectricalState(e_bat=49.0),
                         frame.window(0, 1), np.zeros((1, N_ZONES)))
        s = solve_qp(prob)
        assert s.status == OPTIMAL

    def test_bad_eps_hat_rejected(self, model, cfg, frame):
        x0 = ThermalState(theta=np.full(N_ZONES, 22.0))
        with pytest.raises(ValueError):
            build_ocp(cfg, model, x0, ElectricalState(e_bat=49.0),
                      frame.window(0, cfg.np_steps),
                      np.full((cfg.np_steps, N_ZONES), np.nan))


class TestMpcStep:
    def test_balance_and_couplings_exact(self, params, model, cfg, eps0, frame):
        ctrl = MpcController(cfg, model)
        x = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 20.5]]))
        e = ElectricalState(e_bat=49.0)
        for k in range(3):
            u_th, u_el, sol = ctrl.step(x, e, frame, k, eps0)
            d = Disturbance(theta_air=frame.theta_air[k],
                            q_other=default_q_other(), p_pv=frame.p_pv[k],
                            p_dem=frame.p_dem[k], p_server=frame.p_server[k])
            assert abs(balance_residual(u_el, d, params.eps_c)) < 1e-9
            assert np.max(np.abs(
                coupling_residuals(u_th, u_el, params.c_chp))) < 1e-9

    def test_equilibrium_inputs_near_zero(self, eps0):
        p_free = BuildingParameters(cth=default_parameters().cth,
                                    beta=np.zeros((N_ZONES, N_ZONES)),
                                    ha=np.zeros(N_ZONES))
        from bemsim.building import discretize
        m_free = discretize(p_free)
        cfg_free = make_ocp_config(p_free, q_other=np.zeros(N_ZONES),
                                   solver_eps=1e-8)
        frame = flat_frame(p_dem=-0.0)
        theta0 = np.full(N_ZONES, 22.0)
        theta0[7:] = 20.0  # servers inside their band
        x = ThermalState(theta=theta0)
        u_th, u_el, sol = mpc_step(cfg_free, m_free, x,
                                   ElectricalState(e_bat=49.0), frame, 0)
        assert sol.status == OPTIMAL
        assert np.max(np.abs(u_th.q_heat)) < 1e-3
        assert np.max(np.abs(u_th.q_cool)) < 1e-3

    def test_slack_exactness_and_no_buy_sell_overlap(self, params, model,
                                                     eps0, frame):
        cfg = make_ocp_config(params, solver_eps=1e-8)
        ctrl = MpcController(cfg, model)
        x = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 22.5]]))
        e = ElectricalState(e_bat=49.0)
        u_th, u_el, sol = ctrl.step(x, e, frame, 5, eps0)
        blocks = sol.u_all[:cfg.np_steps * 35].reshape(cfg.np_steps, 35)
        theta_srv = blocks[:, 32:34]
        s_lo = blocks[:, 21:23]
        s_hi = blocks[:, 23:25]
        assert np.max(np.abs(s_lo - np.maximum(cfg.server_lo - theta_srv, 0))) < 1e-4
        assert np.max(np.abs(s_hi - np.maximum(theta_srv - cfg.server_hi, 0))) < 1e-4
        p_buy, p_sell = blocks[:, 16], blocks[:, 17]
        assert np.max(p_buy * p_sell) < 1e-3

    def test_failsafe_on_infeasible_bounds(self, params, model, frame):
        # server zones start far above the hard ceiling and cannot recover
        # within one step: temperature box is infeasible at n=1
        cfg_tight = make_ocp_config(params)
        bounds = replace(params.bounds, theta=(21.9, 22.1),
                         q_cool_zone=(-0.1, 0.0), q_heat_zone=(0.0, 0.1))
        cfg_tight = replace(cfg_tight, bounds=bounds)
        ctrl = MpcController(cfg_tight, model)
        x = ThermalState(theta=np.full(N_ZONES, 30.0))
        u_th, u_el, sol = ctrl.step(x, ElectricalState(e_bat=49.0), frame, 0,
                                    np.zeros((cfg_tight.np_steps, N_ZONES)))
        assert sol.failsafe
        assert np.all(u_th.q_heat == 0.0) and np.all(u_th.q_cool == 0.0)
        d = Disturbance(theta_air=frame.theta_air[0], q_other=default_q_other(),
                        p_pv=frame.p_pv[0], p_dem=frame.p_dem[0],
                        p_server=frame.p_server[0])
        assert abs(balance_residual(u_el, d, params.eps_c)) < 1e-9
        assert ctrl.failsafe_count == 1

    def test_offset_invariance_of_thermal_plan(self, params, model, eps0):
        cfg0 = make_ocp_config(params, solver_eps=1e-8)
        shift = 1.5
        frame0 = flat_frame(theta_air=8.0)
        frame1 = flat_frame(theta_air=8.0 + shift)
        x0 = ThermalState(theta=np.concatenate([np.full(7, 22.0), [19.5, 20.0]]))
        x1 = ThermalState(theta=x0.theta + shift)
        cfg1 = replace(cfg0, ref_comfort=cfg0.ref_comfort + shift,
                       server_lo=cfg0.server_lo + shift,
                       server_hi=cfg0.server_hi + shift)
        u0, _, _ = mpc_step(cfg0, model, x0, ElectricalState(e_bat=49.0),
                            frame0, 0, eps0)
        u1, _, _ = mpc_step(cfg1, model, x1, ElectricalState(e_bat=49.0),
                            frame1, 0, eps0)
        assert np.max(np.abs(u0.q_heat - u1.q_heat)) < 1e-3
        assert np.max(np.abs(u0.q_cool - u1.q_cool)) < 1e-3

    def test_estimator_driven_step_matches_table(self, params, model, frame,
                                                 world):
        from bemsim.features import BUILDING, SERVER
        from bemsim.mpc import horizon_estimates
        from bemsim.regressors import ZoneGroupEstimator
        from bemsim.scenarios import synthesize_dataset
        cfg = make_ocp_config(params)
        ds = synthesize_dataset(world, frame, world.seed_exo_study, 500)
        ests = {
            BUILDING: ZoneGroupEstimator(BUILDING, "ridge").fit(ds[BUILDING]),
            SERVER: ZoneGroupEstimator(SERVER, "ridge").fit(ds[SERVER]),
        }
        k = 10
        table = horizon_estimates(ests, frame, k, cfg.np_steps)
        assert table.shape == (cfg.np_steps, N_ZONES)
        assert np.any(table != 0.0)
        x = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 20.5]]))
        u_a, _, _ = mpc_step(cfg, model, x, ElectricalState(e_bat=49.0),
                             frame, k, estimators=ests)
        u_b, _, _ = mpc_step(cfg, model, x, ElectricalState(e_bat=49.0),
                             frame, k, eps_hat=table)
        assert np.array_equal(u_a.q_heat, u_b.q_heat)

    def test_receding_horizon_consistency(self, params, model):
        # time-invariant forecast, no disturbances or residuals: consecutive
        # plans agree on their overlap
        cfg = make_ocp_config(params, solver_eps=1e-8)
        frame = flat_frame(n=120, theta_air=10.0, p_dem=-200.0)
        eps0 = np.zeros((cfg.np_steps, N_ZONES))
        ctrl = MpcController(cfg, model)
        x = ThermalState(theta=np.concatenate([np.full(7, 22.0), [20, 20.5]]))
        e = ElectricalState(e_bat=49.0)
        from bemsim.building import step_thermal, step_battery
        plans = []
        for k in range(2):
            u_th, u_el, sol = ctrl.step(x, e, frame, k, eps0)
            blocks = sol.u_all[:cfg.np_steps * 35].reshape(cfg.np_steps, 35)
            plans.append(blocks[:, 25:34].copy())
            d = Disturbance(theta_air=frame.theta_air[k],
                            q_other=default_q_other(), p_pv=frame.p_pv[k],
                            p_dem=frame.p_dem[k], p_server=frame.p_server[k])
            x = step_thermal(model, x, u_th, d, np.zeros(N_ZONES))
            e = step_battery(e, u_el.p_bat, params.ts)
        # end-of-horizon steps see different futures; compare the interior
        overlap0 = plans[0][1:41, :]
        overlap1 = plans[1][:40, :]
        assert np.max(np.abs(overlap0 - overlap1)) < 2e-3
