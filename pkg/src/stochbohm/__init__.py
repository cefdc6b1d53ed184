"""Coarse-grained unitary measurement dynamics with Bohmian trajectories.

Modules:

- ``operator_algebra``: projector partitions and spectral exponentials with
  a power-series oracle.
- ``grid_field``: spectral wave packets, impulsive box potentials and
  coincidence diagnostics.
- ``bohmian``: guidance velocities, equilibrium sampling and RK4 ensembles.
- ``stochastic``: pointer overlaps and averages over apparatus parameters.
- ``experiments``: Stern-Gerlach, two-slit, EPR and point-localisation runs.
- ``config`` / ``cli`` / ``verification``: configs, command line, checks.
"""

from .bohmian import (EnsembleSpec, Event, FieldHistory, NodeError, Trajectory, detector_assignment,
                      equivariance_distance, integrate_ensemble, integrate_trajectory, sample_quantum_equilibrium,
                      velocity_at)
from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from .experiments import (ExperimentResult, run_epr, run_experiment, run_point_localisation, run_stern_gerlach,
                          run_two_slit)
from .grid_field import (CoincidenceError, GridError, GridSpec, PacketParams, Region, WaveField,
                         apply_piecewise_impulse, apply_sg_deflection, coincidence_report,
                         extended_impulsive_evolve, free_propagate, kick_check, momentum_expectation,
                         overlap_integral, split_step_evolve, synthesize_packets)
from .operator_algebra import (PartitionError, ProjectorPartition, bch_eta_truncated, coarse_grained_exp,
                               matrix_exp_oracle, tensor_factor_exp, two_factor_exp)
from .stochastic import (Fixed, Gaussian, ParamDensity, PointerModel, StochasticParams, Tied, Uniform,
                         averaged_density, decoherence_matrix, overbar_average, pointer_overlap)

__all__ = [
    "CoincidenceError",
    "ConfigError",
    "EnsembleSpec",
    "Event",
    "ExperimentConfig",
    "ExperimentResult",
    "FieldHistory",
    "Fixed",
    "Gaussian",
    "GridError",
    "GridSpec",
    "NodeError",
    "PacketParams",
    "ParamDensity",
    "PartitionError",
    "PointerModel",
    "ProjectorPartition",
    "Region",
    "StochasticParams",
    "Tied",
    "Trajectory",
    "Uniform",
    "WaveField",
    "apply_piecewise_impulse",
    "apply_sg_deflection",
    "averaged_density",
    "bch_eta_truncated",
    "coarse_grained_exp",
    "coincidence_report",
    "decoherence_matrix",
    "detector_assignment",
    "dump_config",
    "equivariance_distance",
    "extended_impulsive_evolve",
    "free_propagate",
    "integrate_ensemble",
    "integrate_trajectory",
    "kick_check",
    "load_config",
    "matrix_exp_oracle",
    "momentum_expectation",
    "overbar_average",
    "overlap_integral",
    "parse_config",
    "pointer_overlap",
    "run_epr",
    "run_experiment",
    "run_point_localisation",
    "run_stern_gerlach",
    "run_two_slit",
    "sample_quantum_equilibrium",
    "split_step_evolve",
    "synthesize_packets",
    "tensor_factor_exp",
    "two_factor_exp",
    "velocity_at",
]

__version__ = "0.1.0"
