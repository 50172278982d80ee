"""Heterogeneous follow-the-leader traffic and its macroscopic limits.

Simulate car-following dynamics with randomly mixed driver types, build
the effective speed-vs-headway law of the mix, solve the limiting
Hamilton-Jacobi and LWR models, and verify the micro-to-macro convergence
by rescaling experiments.
"""

__version__ = "0.1.0"

from .errors import (ConfigFileError, ConfigurationError, DomainError,
                     FluxConstructionError, FtlMacroError)
from .velocity_models import (FAMILY_NEWELL, FAMILY_TABLE,
                              FAMILY_TRUNCATED_LINEAR, TypeDistribution,
                              ValidationReport, VehicleTypeSpec,
                              demo_two_type_mix, ovf_eval, ovf_inverse,
                              sample_types, validate_assumptions)
from .micro_sim import (FreeFlow, GhostHeadway, LocalizationReport,
                        MicroState, MicroTrajectory, PrescribedTrajectory,
                        asymptotic_speed, check_comparison,
                        corrector_sequence, default_dt, integrate,
                        localization_bound_check)
from .effective_flux import (EffectiveFlux, build_flux, effective_speed_at,
                             expected_inverse, flux_eval, flux_lipschitz,
                             lwr_flow, lwr_flow_breakpoints, lwr_speed,
                             read_flux_csv, write_flux_csv,
                             write_fundamental_diagram_csv)
from .macro_solvers import (Grid1D, GridField, invert_profile,
                            pushforward_density, solve_hj,
                            solve_lwr_godunov)
from .convergence_harness import (AffineProfile, ConvergenceReport,
                                  PiecewiseLinearProfile, Scenario,
                                  SmoothRampProfile, convergence_study,
                                  discretize_initial,
                                  fundamental_diagram_study, rescale_micro)
