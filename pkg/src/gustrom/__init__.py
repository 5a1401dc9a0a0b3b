"""Excitation-independent nonlinear reduced-order models for fast worst-case
gust searches on aeroelastic state-space systems."""

from .aerofoil import AerofoilParams, build_aerofoil_model, flutter_trace
from .exceptions import (ConfigError, ConsistencyError, ContractError,
                         DivergenceError, GustromError, NumericalError,
                         ReductionError, SolverError)
from .gust import (DiscreteGustSpec, GustSignal, TurbulenceSpec,
                   gust_frequency, one_minus_cosine, penetration_delay,
                   von_karman_psd, von_karman_realization)
from .model import (Equilibrium, Model, ModelDescriptor, evaluate_residual,
                    find_equilibrium)
from .nmor import (BasisSelection, RomModel, build_rom, compute_jacobian,
                   load_rom, save_rom, select_basis)
from .sim import ResponseMetrics, TimeHistory, extract_metrics, integrate
from .sweep import (SweepResult, SweepSpec, VelocityLaw, benchmark,
                    design_gust_velocity, run_search)

__version__ = "0.1.0"
