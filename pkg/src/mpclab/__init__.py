"""Receding-horizon control with noisy forecasts: exact windowed solvers,
saddle-matrix sensitivity analysis, and dynamic-regret certification."""

from .model import (Bounds, DisturbanceOnlySystem, Instance, InventorySystem,
                    ModelError, ParamBox, ParamSeq, PredictionStream,
                    QuadraticTrackingSystem, TerminalCost, build_instance,
                    config_hash, controllability_matrix,
                    min_singular_controllability, validate_assumptions)
from .ftocp import (FtocpSolution, FtocpSpec, Infeasible, SingularKKT,
                    clairvoyant_action, solve, solve_inventory,
                    solve_quadratic)
from .kkt import (DecayFit, GainTables, SaddleBounds, SpectrumBounds,
                  TrackingDecayConstants, assemble, block_inverse_profile,
                  general_decay_constants, measure_gain_tables,
                  saddle_spectrum_bounds, theory_gain_tables,
                  tracking_decay_constants)
from .engine import (TerminalRule, TrajectoryRecord,
                     per_step_error_bound_rhs, pipeline_admission_check,
                     run_mpc, solve_opt)
from .regret import (RegretReport, SweepResult, aggregate_E,
                     regret_inequalities, sweep_horizon, sweep_noise)
from .presets import PRESETS, build_preset, inventory_counterexample_suite

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
