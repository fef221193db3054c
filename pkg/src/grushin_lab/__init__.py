"""Numerical laboratory for the inverse coefficient problem of Grushin-type parabolic equations."""
from .grid import (CoefficientError, CoefficientField, Grid1D, SubdomainSpec, build_grid, l2_inner,
                   make_coefficient, restrict_to, validate_coefficient)
from .spectral import ModeStack, SpectralBasisY, build_basis, project, synthesize
from .modes import (ModeOperator, ModeSpectrum, ModeTrajectory, assemble_operator, eigendecompose,
                    fractional_norm, heat_semigroup_subdomain, solve_mode, step_mode, time_derivative)
from .eigen import ScalingFitReport, decay_rate_estimate, lambda_sweep
from .stability import (StabilityReport, check_class_membership, comparison_lower_bound,
                        duhamel_bound_check, harnack_ratio, reconstruct_coefficient, stability_ratio)

__version__ = "0.1.0"
