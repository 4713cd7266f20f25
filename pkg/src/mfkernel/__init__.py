"""Particle and mean-field adjoint gradients for interacting-agent dynamics."""

__version__ = "0.1.0"

from .errors import CflError, DivergenceError, GridAlignmentError, SamplingError
from .kernels import (BasisSet, InteractionKernel, ParamKernel, VelocityField,
                      assemble_param_kernel, gaussian_grad_basis_2d,
                      gaussian_grad_basis_set, gaussian_kernel_1d,
                      laguerre_basis_1d, laguerre_basis_set,
                      verify_kernel_assumptions, zero_kernel)
from .sampling import (DensitySpec, ParticleEnsemble, bimodal_gaussian_1d,
                       mollified_uniform, rejection_sample, two_bump_gaussian_2d,
                       uniform_box)
from .particle import (AdjointTrajectory, ParticleTrajectory, TimeGrid,
                       adjoint_characteristics, adjoint_interacting,
                       forward_characteristics, forward_interacting,
                       mismatch_terminal_gradient, terminal_gradient)
from .meanfield import (DensityField, FieldHistory, Grid, convolve_velocity,
                        density_from_spec, grad_field, grid_1d, grid_2d, measure,
                        solve_adjoint_linear, solve_adjoint_meanfield,
                        solve_forward_linear, solve_forward_meanfield, upwind_step)
from .gradients import (GradientField, Mollifier, compare_fields,
                        kernel_gradient_particles, kernel_gradient_pde,
                        project_gradient, symmetric_axis, velocity_gradient_particles,
                        velocity_gradient_pde, weak_pairing)
from .inverse import (InverseProblem, LineSearchParams, MeasurementSpec,
                      ReconstructionHistory, backtracking_step, coefficient_gradient,
                      generate_data, kernel_error, objective, reconstruct)
