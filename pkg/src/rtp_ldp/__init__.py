"""Run-and-tumble lattice gas with mean-field flips: simulation, hydrodynamics,
and path large-deviation rate evaluation."""

__version__ = "0.1.0"

from .rates import SwitchRateFamily, evaluate_switch_rate, curie_weiss_fixed_points
from .fields import (
    DensityField, DensityTrajectory, PerturbationField, FourierMode,
    UniformProfile, SineProfile, magnetization_of_density, regularize_trajectory,
)
from .lattice import LatticeConfiguration, magnetization_of_configuration, empirical_density
from .simulate import (
    SimulationSpec, PathRecord, sample_initial, step_event, run_path,
    replica_ensemble, log_radon_nikodym, dynkin_residual, quadratic_variation,
    empirical_trajectory, aggregate_rates,
)
from .hydro import (
    SolverSpec, solve_hydrodynamic, solve_perturbed, integrate_magnetization_ode,
    perturbed_magnetization_check, picard_iterate, l1_distance,
)
from .ldp import (
    FluxDecomposition, RateReport, static_rate, linear_functional_ell,
    dynamic_rate_with_G, flux_extraction, psi_reconstruction, dynamic_rate_exact,
    variational_lower_bound_sweep, total_rate,
)
