"""Simulation and certification toolkit for switched dissipative systems
with delayed feedback.

The pieces: interval-representation switching chains driven by keyed Poisson
mark fields (chain), ergodicity certificates built on nonsingular M-matrix
tests with a finite-partition route for countable regimes (certify), spectral
exponential-Euler path integration with exact splitting at switch times (sim),
and ensemble experiments for moments, contraction, coupling tails, remote
starts and invariance (lab).  A compiled kernel is used when available; the
pure NumPy fallback is bit-compatible in distribution and agrees to floating
point accuracy.
"""

from ._kernel import BACKEND as kernel_backend, available_backends
from .chain import (ChainPath, CouplingFunctionReport, GeneratorMatrix,
                    IntervalTable, PoissonField, build_intervals, couple_chains,
                    gillespie_chain, jump_offset, simulate_chain,
                    two_chain_generator, verify_coupling_function)
from .certify import (Certificate, MMatrixReport, ModelCoefficients, Partition,
                      RateSolution, build_partition, block_generator,
                      certify_finite, certify_partitioned, delay_condition,
                      dissipation_matrix, is_nonsingular_m_matrix,
                      solve_decay_rates)
from .core import (DelayMeasure, Segment, StatePoint, ValidationError,
                   constant_segment, delay_integral, point_mass_now,
                   segment_norm_r, state_distance, zero_segment)
from .lab import (ContractionReport, CouplingReport, DecayFit, EmpiricalMeasure,
                  EnsembleSpec, InvarianceReport, MixingReport, MomentReport,
                  Observable, RemoteStartReport, builtin_observables,
                  contraction_experiment, coupling_tail_experiment,
                  fit_exponential_decay, invariance_check, mixing_experiment,
                  moment_bound_experiment, remote_start_measure)
from .sim import (AffineCoefficients, Model, OperatorFamily, PairResult,
                  SimulationDiverged, SolverConfig, Trajectory, WienerField,
                  certify_affine, derived_solver, exp_euler_step,
                  load_checkpoint, phi_factor, remote_start_solve, run_schedule,
                  save_checkpoint, simulate_pair_shared_noise, simulate_path,
                  trajectory_segment_norms)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "kernel_backend",
    "available_backends",
    # core
    "ValidationError", "DelayMeasure", "Segment", "StatePoint",
    "point_mass_now", "constant_segment", "zero_segment", "segment_norm_r",
    "delay_integral", "state_distance",
    # chain
    "GeneratorMatrix", "IntervalTable", "build_intervals", "jump_offset",
    "PoissonField", "ChainPath", "simulate_chain", "gillespie_chain",
    "couple_chains", "two_chain_generator", "verify_coupling_function",
    "CouplingFunctionReport",
    # certify
    "ModelCoefficients", "MMatrixReport", "is_nonsingular_m_matrix",
    "dissipation_matrix", "delay_condition", "RateSolution",
    "solve_decay_rates", "Certificate", "certify_finite", "build_partition",
    "block_generator", "Partition", "certify_partitioned",
    # sim
    "OperatorFamily", "AffineCoefficients", "Model", "SolverConfig",
    "WienerField", "certify_affine", "phi_factor", "exp_euler_step",
    "SimulationDiverged", "Trajectory", "simulate_path", "PairResult",
    "simulate_pair_shared_noise", "remote_start_solve", "derived_solver",
    "trajectory_segment_norms", "save_checkpoint", "load_checkpoint",
    "run_schedule",
    # lab
    "EnsembleSpec", "DecayFit", "fit_exponential_decay", "Observable",
    "builtin_observables", "EmpiricalMeasure", "MomentReport",
    "moment_bound_experiment", "ContractionReport", "contraction_experiment",
    "CouplingReport", "coupling_tail_experiment", "RemoteStartReport",
    "remote_start_measure", "MixingReport", "mixing_experiment",
    "InvarianceReport", "invariance_check",
]
