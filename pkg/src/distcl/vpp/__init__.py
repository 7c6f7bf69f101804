"""Virtual power plant case: data generators, model builder and profit metrics."""
from .data import (FEATURES, DemandResponseConfig, ExogenousProfiles, GeneratorConfig,
                   generate_exogenous_scenarios, generate_training_data,
                   simulate_demand_response)
from .metrics import ProfitMetrics, profit_metrics
from .model import (MODES, VppInstance, VppModel, VppParams, VppSolution, build_vpp_model,
                    run_deterministic_pipeline, run_mode, solve_vpp)

__all__ = [
    "FEATURES", "DemandResponseConfig", "ExogenousProfiles", "GeneratorConfig",
    "generate_exogenous_scenarios", "generate_training_data", "simulate_demand_response",
    "ProfitMetrics", "profit_metrics", "MODES", "VppInstance", "VppModel", "VppParams",
    "VppSolution", "build_vpp_model", "run_deterministic_pipeline", "run_mode", "solve_vpp",
]
