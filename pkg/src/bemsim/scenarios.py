"""Year-long closed-loop scenario runs with monthly retraining.

Scenario family (data-availability regimes):

  S0  no error compensation (estimate fixed at zero)
  S1  monthly retraining on data collected in the loop, no prior data
  S2  monthly retraining, prior-year data appended
  S3  monthly retraining, prior + collected data in a rolling 12-month window
  S4  estimators pretrained on the prior year, never retrained
  S5  estimators trained on the completed S0 log of the same year, then the
      year is re-simulated with compensation active

The simulated timeline has the prior year as months 0..11 and the study
year as months 12..23, so window arithmetic uses one calendar.  Because
the plant is the controller model plus an exogenous disturbance that
depends only on exogenous data, prior-year training pairs are synthesized
directly from the prior-year frame unless `simulate_prior_year` asks for
a full closed-loop pre-run (both paths produce the same pairs up to
floating-point noise in the closed-loop target arithmetic).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .building import (N_BUILDING, N_ZONES, ElectricalState, ThermalState,
                       discretize)
from .config import WorldConfig, fingerprint
from .datagen import (TimeSeriesFrame, generate_span, month_index,
                      month_start_step)
from .features import (BUILDING, SERVER, ResidualDataset, assemble_dataset,
                       compute_target, corrected_prediction, extract_features,
                       feature_matrix)
from .metrics import metric_weights, monthly_series, rmse_tracking, wmare, wmre
from .mpc import MpcController, zone_weights
from .regressors import ZoneGroupEstimator
from .twin import (TwinState, build_exogenous, measure, perturbed_parameters,
                   realized_disturbance, true_exogenous_span, twin_step)

logger = logging.getLogger(__name__)

SCENARIO_IDS = ("S0", "S1", "S2", "S3", "S4", "S5")


class DependencyError(RuntimeError):
    """A prerequisite run or data source is missing."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one data-availability regime."""

    id: str
    retrain: str            # "monthly" | "none"
    use_prior: bool
    window_months: int | None
    estimator: str          # "none" | "in-loop" | "pretrained" | "oracle-s0"

    def __post_init__(self):
        if self.retrain not in ("monthly", "none"):
            raise ValueError(f"bad retrain cadence {self.retrain!r}")
        if self.estimator not in ("none", "in-loop", "pretrained", "oracle-s0"):
            raise ValueError(f"bad estimator source {self.estimator!r}")


def scenario_spec(sid: str) -> ScenarioSpec:
    table = {
        "S0": ScenarioSpec("S0", "none", False, None, "none"),
        "S1": ScenarioSpec("S1", "monthly", False, None, "in-loop"),
        "S2": ScenarioSpec("S2", "monthly", True, None, "in-loop"),
        "S3": ScenarioSpec("S3", "monthly", True, 12, "in-loop"),
        "S4": ScenarioSpec("S4", "none", True, None, "pretrained"),
        "S5": ScenarioSpec("S5", "none", False, None, "oracle-s0"),
    }
    if sid not in table:
        raise ValueError(f"unknown scenario {sid!r}; expected one of {SCENARIO_IDS}")
    return table[sid]


@dataclass
class ScenarioResult:
    """Per-step log plus aggregate metrics for one scenario run."""

    spec: ScenarioSpec
    start: int
    n_steps: int
    steps: np.ndarray
    theta: np.ndarray        # state at k, (n, 9) degC
    e_bat: np.ndarray        # state at k, kWh
    q_heat: np.ndarray       # (n, 7)
    q_cool: np.ndarray       # (n, 9)
    p_grid: np.ndarray
    p_chp: np.ndarray
    p_bat: np.ndarray
    q_rad: np.ndarray
    eps_true: np.ndarray     # (n, 9) K
    eps_hat: np.ndarray      # (n, 9) K
    eps_target: np.ndarray   # (n, 9) K
    j_comf: np.ndarray
    j_server: np.ndarray
    j_mon: np.ndarray
    solver_iterations: np.ndarray
    solver_status: list
    failsafe: np.ndarray
    metrics: dict = field(default_factory=dict)
    monthly: dict = field(default_factory=dict)
    config_fingerprint: str = ""
    runtime_s: float = 0.0   # wall clock; excluded from deterministic outputs

    @property
    def eps_resid(self) -> np.ndarray:
        """Post-compensation one-step model error, K."""
        return self.eps_target - self.eps_hat


def _frames(world: WorldConfig) -> tuple[TimeSeriesFrame, TimeSeriesFrame]:
    """(prior-year frame, study-year frame), each with horizon lookahead."""
    clock = world.clock
    n = world.year_steps
    horizon = world.control.np_steps
    gen_prior = replace(world.gen, seed=world.seed_frame_prior)
    gen_study = replace(world.gen, seed=world.seed_frame_study)
    prior = generate_span(gen_prior, clock, clock.steps_per_year + horizon, start=0)
    study = generate_span(gen_study, clock, n + horizon,
                          start=clock.steps_per_year)
    return prior, study


def synthesize_dataset(world: WorldConfig, frame: TimeSeriesFrame,
                       exo_seed: int, n_steps: int) -> dict:
    """(building, server) training pairs straight from a frame: features at
    each step and the true exogenous disturbance as the target."""
    params = world.building
    exo = build_exogenous(replace(world.exo, seed=exo_seed), params, frame)
    ks = frame.start + np.arange(2, n_steps)
    eps = true_exogenous_span(exo, frame, ks)
    return {
        BUILDING: ResidualDataset(BUILDING, ks, feature_matrix(frame, ks, BUILDING),
                                  eps[:, :N_BUILDING]),
        SERVER: ResidualDataset(SERVER, ks, feature_matrix(frame, ks, SERVER),
                                eps[:, N_BUILDING:]),
    }


def result_datasets(result: ScenarioResult, frame: TimeSeriesFrame) -> dict:
    """Training pairs from a completed run's logged targets (lag steps skipped)."""
    keep = result.steps >= result.start + 2
    ks = result.steps[keep]
    y = result.eps_target[keep]
    return {
        BUILDING: ResidualDataset(BUILDING, ks, feature_matrix(frame, ks, BUILDING),
                                  y[:, :N_BUILDING]),
        SERVER: ResidualDataset(SERVER, ks, feature_matrix(frame, ks, SERVER),
                                y[:, N_BUILDING:]),
    }


def _fit_estimators(world: WorldConfig, datasets: dict, month: int) -> dict:
    """One GBT group for building zones, one ridge group for server zones."""
    out = {}
    for group, kind, tag in ((BUILDING, "gbt", 0), (SERVER, "ridge", 1)):
        ds = datasets[group]
        if len(ds) == 0:
            raise ValueError(f"no training rows for group {group}")
        est = ZoneGroupEstimator(group=group, kind=kind, gbt=world.gbt,
                                 ridge_lam=world.ridge_lam,
                                 seed=world.seed * 100 + month * 4 + tag * 2)
        est.fit(ds)
        out[group] = est
    return out


def _predict_table(world: WorldConfig, estimators: dict | None,
                   frame: TimeSeriesFrame, k0: int, k1: int,
                   table: np.ndarray) -> None:
    """Fill eps-hat rows for absolute steps [k0, k1) into `table` (indexed
    relative to frame.start).  Building lags force zero for the first two
    steps of the frame."""
    if estimators is None:
        table[k0 - frame.start:k1 - frame.start] = 0.0
        return
    lo = max(k0, frame.start + 2)
    table[k0 - frame.start:lo - frame.start] = 0.0
    if lo >= k1:
        return
    ks = np.arange(lo, k1)
    xb = feature_matrix(frame, ks, BUILDING)
    xs = feature_matrix(frame, ks, SERVER)
    sl = slice(lo - frame.start, k1 - frame.start)
    table[sl, :N_BUILDING] = estimators[BUILDING].predict(xb)
    table[sl, N_BUILDING:] = estimators[SERVER].predict(xs)


def run_scenario(sid: str | ScenarioSpec, world: WorldConfig,
                 study_frame: TimeSeriesFrame | None = None,
                 prior_datasets: dict | None = None,
                 s0_result: ScenarioResult | None = None) -> ScenarioResult:
    """Execute one scenario over the study year.

    Optional arguments let run_all share the generated frame, the prior
    datasets and the completed S0 run; a standalone call produces its own
    prerequisites (S5 runs an internal S0 pass first).
    """
    spec = sid if isinstance(sid, ScenarioSpec) else scenario_spec(sid)
    t_start = time.perf_counter()
    clock = world.clock

    if study_frame is None:
        _, study_frame = _frames(world)
    if spec.use_prior and prior_datasets is None:
        prior_frame, _ = _frames(world)
        if world.simulate_prior_year:
            prior_run = _run_loop(scenario_spec("S0"), world, prior_frame,
                                  start=0, n_steps=world.clock.steps_per_year,
                                  exo_seed=world.seed_exo_prior,
                                  prior_datasets=None, estimators0=None)
            prior_datasets = result_datasets(prior_run, prior_frame)
        else:
            prior_datasets = synthesize_dataset(world, prior_frame,
                                                world.seed_exo_prior,
                                                world.clock.steps_per_year)
    if spec.estimator == "oracle-s0" and s0_result is None:
        s0_result = run_scenario("S0", world, study_frame=study_frame)

    estimators0 = None
    if spec.estimator == "pretrained":
        if prior_datasets is None:
            raise DependencyError(f"{sid} needs prior-year data")
        estimators0 = _fit_estimators(world, prior_datasets, month=11)
    elif spec.estimator == "oracle-s0":
        estimators0 = _fit_estimators(
            world, result_datasets(s0_result, study_frame), month=23)
    elif spec.estimator == "in-loop" and spec.use_prior:
        start = study_frame.start
        first = {
            g: assemble_dataset(ResidualDataset.empty(g), prior_datasets[g],
                                spec.window_months, now=start, clock=clock)
            for g in (BUILDING, SERVER)
        }
        estimators0 = _fit_estimators(world, first, month=11)

    result = _run_loop(spec, world, study_frame, start=study_frame.start,
                       n_steps=world.year_steps, exo_seed=world.seed_exo_study,
                       prior_datasets=prior_datasets, estimators0=estimators0)
    result.runtime_s = time.perf_counter() - t_start
    return result


def _run_loop(spec: ScenarioSpec, world: WorldConfig, frame: TimeSeriesFrame,
              start: int, n_steps: int, exo_seed: int,
              prior_datasets: dict | None, estimators0: dict | None
              ) -> ScenarioResult:
    params = world.building
    clock = world.clock
    model = discretize(params)
    twin_model = model
    if world.mismatch_rel > 0.0:
        twin_model = discretize(perturbed_parameters(params, world.mismatch_rel,
                                                     world.seed + 17))
    exo = build_exogenous(replace(world.exo, seed=exo_seed), params, frame)
    cfg = world.ocp_config()
    ctrl = MpcController(cfg, model)
    q_other = np.asarray(world.q_other)
    horizon = cfg.np_steps

    n = n_steps
    log = {name: np.zeros(shape) for name, shape in (
        ("theta", (n, N_ZONES)), ("e_bat", n), ("q_heat", (n, N_BUILDING)),
        ("q_cool", (n, N_ZONES)), ("p_grid", n), ("p_chp", n), ("p_bat", n),
        ("q_rad", n), ("eps_true", (n, N_ZONES)), ("eps_hat", (n, N_ZONES)),
        ("eps_target", (n, N_ZONES)), ("j_comf", n), ("j_server", n),
        ("j_mon", n), ("solver_iterations", n), ("failsafe", n))}
    statuses: list[str] = []

    eps_table = np.zeros((n + horizon, N_ZONES))
    estimators = estimators0
    _predict_table(world, estimators, frame, start, start + n + horizon, eps_table)

    boundaries = set()
    if spec.retrain == "monthly":
        m0 = 12 * (start // clock.steps_per_year)
        boundaries = {month_start_step(clock, m) for m in range(m0 + 1, m0 + 13)}
        boundaries = {b for b in boundaries if start < b < start + n}

    history = {BUILDING: ResidualDataset.empty(BUILDING),
               SERVER: ResidualDataset.empty(SERVER)}
    hist_rows = {BUILDING: [], SERVER: []}

    state = TwinState(thermal=ThermalState(theta=np.asarray(world.theta0)),
                      electrical=ElectricalState(e_bat=world.e_bat0), k=start)

    for k in range(start, start + n):
        if k in boundaries:
            for g in (BUILDING, SERVER):
                if hist_rows[g]:
                    history[g] = history[g].extended(
                        [r[0] for r in hist_rows[g]],
                        np.array([r[1] for r in hist_rows[g]]),
                        np.array([r[2] for r in hist_rows[g]]))
                    hist_rows[g] = []
            month = int(month_index(clock, k))
            train = {
                g: assemble_dataset(history[g],
                                    prior_datasets[g] if spec.use_prior else None,
                                    spec.window_months, now=k, clock=clock)
                for g in (BUILDING, SERVER)
            }
            if all(len(train[g]) > 0 for g in train):
                estimators = _fit_estimators(world, train, month=month)
                nxt = min(min((b for b in boundaries if b > k), default=start + n),
                          start + n)
                _predict_table(world, estimators, frame, k, nxt + horizon, eps_table)

        i = k - start
        x_meas, e_meas = measure(state)
        eps_hat_path = eps_table[i:i + horizon]
        u_th, u_el, sol = ctrl.step(x_meas, e_meas, frame, k, eps_hat_path)
        state = twin_step(params, twin_model, state, (u_th, u_el), frame, exo,
                          q_other=q_other)
        d_meas = realized_disturbance(frame, k, q_other)
        x_pred = corrected_prediction(model, x_meas, u_th, d_meas, eps_table[i])
        target = compute_target(state.thermal, x_pred, eps_table[i])

        log["theta"][i] = x_meas.theta
        log["e_bat"][i] = e_meas.e_bat
        log["q_heat"][i] = u_th.q_heat
        log["q_cool"][i] = u_th.q_cool
        log["p_grid"][i] = u_el.p_grid
        log["p_chp"][i] = u_el.p_chp
        log["p_bat"][i] = u_el.p_bat
        log["q_rad"][i] = u_el.q_rad
        log["eps_true"][i] = true_exogenous_span(exo, frame, np.array([k]))[0]
        log["eps_hat"][i] = eps_table[i]
        log["eps_target"][i] = target
        log["j_comf"][i] = sol.j_comf
        log["j_server"][i] = sol.j_server
        log["j_mon"][i] = sol.j_mon
        log["solver_iterations"][i] = sol.iterations
        log["failsafe"][i] = float(sol.failsafe)
        statuses.append(sol.status)

        if k >= start + 2:
            fb = extract_features(frame, k, BUILDING)
            fs = extract_features(frame, k, SERVER)
            hist_rows[BUILDING].append((k, fb, target[:N_BUILDING]))
            hist_rows[SERVER].append((k, fs, target[N_BUILDING:]))

    steps = start + np.arange(n)
    result = ScenarioResult(
        spec=spec, start=start, n_steps=n, steps=steps,
        theta=log["theta"], e_bat=log["e_bat"], q_heat=log["q_heat"],
        q_cool=log["q_cool"], p_grid=log["p_grid"], p_chp=log["p_chp"],
        p_bat=log["p_bat"], q_rad=log["q_rad"], eps_true=log["eps_true"],
        eps_hat=log["eps_hat"], eps_target=log["eps_target"],
        j_comf=log["j_comf"], j_server=log["j_server"], j_mon=log["j_mon"],
        solver_iterations=log["solver_iterations"], solver_status=statuses,
        failsafe=log["failsafe"], config_fingerprint=fingerprint(world))
    _attach_metrics(result, world)
    if ctrl.failsafe_count or ctrl.inaccurate_count:
        logger.warning("%s: %d failsafe, %d iteration-capped solves",
                       spec.id, ctrl.failsafe_count, ctrl.inaccurate_count)
    return result


def _attach_metrics(result: ScenarioResult, world: WorldConfig) -> None:
    w = metric_weights(world.building)
    wthb, _ = zone_weights(world.building)
    resid = result.eps_resid
    ref = world.control.ref_comfort
    result.metrics = {
        "wmare_K": wmare(resid, w),
        "wmre_K": wmre(resid, w),
        "rmse_tracking_K": rmse_tracking(result.theta, wthb, ref),
        "failsafe_steps": float(result.failsafe.sum()),
    }
    result.monthly = monthly_series(result.steps, resid, result.theta, w, wthb,
                                    world.clock, ref)


def run_all(world: WorldConfig, scenario_ids=SCENARIO_IDS, jobs: int = 1,
            data_frame: TimeSeriesFrame | None = None) -> dict:
    """Run a set of scenarios with shared prerequisites.

    S0 runs first when any dependent scenario is requested; S1..S5 can run
    in parallel worker processes.  `data_frame` replaces the generated
    study-year data (scenarios needing prior data then raise
    DependencyError, since no prior year exists for external data).
    """
    scenario_ids = list(scenario_ids)
    for sid in scenario_ids:
        scenario_spec(sid)
    if data_frame is not None:
        study = data_frame
        prior_sets = None
        if any(scenario_spec(s).use_prior for s in scenario_ids):
            raise DependencyError(
                "externally supplied data covers the study year only; "
                "S2/S3/S4 need a prior-year run")
    else:
        _, study = _frames(world)
        prior_sets = None
        if any(scenario_spec(s).use_prior for s in scenario_ids):
            prior_frame, _ = _frames(world)
            if world.simulate_prior_year:
                pre = _run_loop(scenario_spec("S0"), world, prior_frame, start=0,
                                n_steps=world.clock.steps_per_year,
                                exo_seed=world.seed_exo_prior,
                                prior_datasets=None, estimators0=None)
                prior_sets = result_datasets(pre, prior_frame)
            else:
                prior_sets = synthesize_dataset(world, prior_frame,
                                                world.seed_exo_prior,
                                                world.clock.steps_per_year)

    results: dict[str, ScenarioResult] = {}
    s0_needed = "S0" in scenario_ids or "S5" in scenario_ids
    if s0_needed:
        results["S0"] = run_scenario("S0", world, study_frame=study)
    rest = [s for s in scenario_ids if s != "S0"]
    if jobs > 1 and len(rest) > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(min(jobs, len(rest))) as pool:
            futures = {
                sid: pool.apply_async(
                    run_scenario, (sid, world),
                    {"study_frame": study, "prior_datasets": prior_sets,
                     "s0_result": results.get("S0")})
                for sid in rest
            }
            for sid, fut in futures.items():
                results[sid] = fut.get()
    else:
        for sid in rest:
            results[sid] = run_scenario(sid, world, study_frame=study,
                                        prior_datasets=prior_sets,
                                        s0_result=results.get("S0"))
    return {sid: results[sid] for sid in scenario_ids if sid in results}
