"""Stable-like jump noise, Kolmogorov equations with Hoelder drift, Zvonkin
transforms and pathwise Malliavin derivatives on grids."""

from .density import DensityGrid, build_density
from .errors import (AccuracyError, BlowUpError, ConfigError, DivergenceError, HorizonTooLarge,
                     InvalidArgument, LevyZvonkinError, NegativeDensityError, OutOfDomain,
                     ResolutionError)
from .grid import Box, GridFunction
from .kolmogorov import KolmogorovSolution, estimate_cT, solve_backward, solve_forward
from .levy_model import LevyModel, apply_generator, eval_psi, eval_psi_scaled, eval_psi_tilde
from .semigroup import apply_semigroup, derivative_scaling_report, holder_norm
from .simulate import (MollifierFamily, euler_batch, euler_solve, mollify, sample_levy_increments,
                       sample_noise_batch, strong_convergence_study, uniqueness_check)
from .zvonkin_malliavin import (MalliavinField, SlobodeckijSpec, bound_growth,
                                lemma13_bound_check, malliavin_u_recursion, malliavin_variational,
                                slobodeckij_functional, solve_zvonkin, zvonkin_residual)

__all__ = [
    "AccuracyError", "BlowUpError", "Box", "ConfigError", "DensityGrid", "DivergenceError",
    "GridFunction", "HorizonTooLarge", "InvalidArgument", "KolmogorovSolution",
    "LevyModel", "LevyZvonkinError", "MalliavinField", "MollifierFamily",
    "NegativeDensityError", "OutOfDomain", "ResolutionError", "SlobodeckijSpec",
    "apply_generator", "apply_semigroup", "bound_growth", "build_density",
    "derivative_scaling_report",
    "estimate_cT", "euler_batch", "euler_solve", "eval_psi", "eval_psi_scaled",
    "eval_psi_tilde", "holder_norm", "lemma13_bound_check", "malliavin_u_recursion",
    "malliavin_variational", "mollify", "sample_levy_increments", "sample_noise_batch",
    "slobodeckij_functional", "solve_backward", "solve_forward", "solve_zvonkin",
    "strong_convergence_study", "uniqueness_check", "zvonkin_residual",
]
