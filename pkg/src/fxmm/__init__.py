"""FX dealer market-making toolkit.

Calibrates client trade-intensity functions from dealer trade/quote logs,
solves for optimal multi-tier pricing ladders and external hedging rates on
an inventory grid, and evaluates strategies by Monte Carlo simulation.
"""

from .errors import (DegenerateInputError, FitConvergenceError, FxmmError,
                     InsufficientDataError, NoDataError, ParseError,
                     SolverNumericsError, UnboundedHamiltonianError,
                     UndefinedLikelihoodError, ValidationError)
from .flow import (FlowData, IntensityShape, QuoteObservation, SizeLadder,
                   TierAssignment, TierIntensity, TradeObservation,
                   bucket_trade, cluster_shapes, default_tiers,
                   fit_client_shapes, fit_mle, fit_tier, kmeans_tiers,
                   log_likelihood, merge_flow_data, simulate_flow_data,
                   trade_probability)
from .hamiltonians import (ExecutionCost, client_hamiltonian, exec_hamiltonian,
                           lambertw_exp, optimal_quote)
from .hjb import (ModelParams, SolveReport, StrategyTable, ValueFunction,
                  default_params, extract_strategy, internalization_band,
                  solve_hjb)
from .simulate import (EventLog, FrontierResult, FrontierRow, PathRecords,
                       SimConfig, SimMetrics, apply_perturbation,
                       efficient_frontier, fraction_below_curve,
                       frontier_spline, max_expected_pnl, perturb_strategy,
                       risk_neutralization_time, simulate, volume_shares)

__version__ = "0.1.0"
