"""Software-in-the-loop lab for MPC building energy management with
data-driven residual estimation."""

from .building import (BoxBounds, BuildingParameters, DiscreteModel,
                       Disturbance, ElectricalInput, ElectricalState,
                       ThermalInput, ThermalState, balance_residual,
                       continuous_matrices, default_parameters,
                       default_q_other, discretize, step_battery,
                       step_thermal)
from .config import WorldConfig, default_config, load_config, save_config
from .datagen import (CalendarClock, GeneratorConfig, TimeSeriesFrame,
                      generate_span, load_csv, write_csv)
from .features import (ResidualDataset, assemble_dataset, compute_target,
                       corrected_prediction, extract_features)
from .metrics import MetricWeights, metric_weights, rmse_tracking, ware, wmare, wmre
from .mpc import MpcController, OcpConfig, build_ocp, make_ocp_config, mpc_step, zone_weights
from .qp import BoxQpSolver, InteriorPointQp, QpProblem, QpSolution, solve_qp
from .regressors import (GbtConfig, GradientBoostedTrees, RidgeLinear,
                         ZoneGroupEstimator, load_estimator, save_estimator)
from .scenarios import (SCENARIO_IDS, ScenarioResult, ScenarioSpec, run_all,
                        run_scenario, scenario_spec)
from .twin import ExogenousConfig, ExogenousModel, TwinState, build_exogenous, measure, true_exogenous, twin_step

__version__ = "0.1.0"
