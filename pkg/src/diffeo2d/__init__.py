"""2D diffeomorphic image matching with right- and left-invariant metrics.

The package provides: a discrete grid substrate (images, vector fields,
deformations), a recursive reproducing-kernel algebra including mirror
soft-symmetry and partition-of-unity kernels, spatial/convective flow
integration with the left/right geodesic correspondence, an inexact
matching optimizer with an exact discrete adjoint, pulson (landmark)
geodesic dynamics, bit-exact file formats, and a command-line interface.
"""

from .errors import (BadMagicError, BadValueError, ConfigError,
                     DegeneratePartitionError, Diffeo2DError, FileFormatError,
                     GridMismatchError, HeaderMismatchError, MalformedHeaderError,
                     MissingKernelError, MissingMomentaError, NonConvergentError,
                     NonFiniteError, NotPSDError, ResidualTooLargeError,
                     TruncatedPayloadError, UnknownKeyError)
from .grid import (Deformation, Grid2D, Image, Mask, VectorField,
                   bilinear_sample, compose, invert, jacobian_determinant,
                   spatial_gradient, warp_image)
from .kernels import (GaussianKernel, PartitionKernel, SumKernel,
                      SymmetrizedKernel, apply_kernel, apply_kernel_transpose,
                      make_partition_weights, reflect, vnorm_sq)
from .flows import (DeformationPath, VelocityPath, correspond_left_right,
                    integrate_convective, integrate_inverse, integrate_spatial,
                    path_energy, path_length, step_energies)
from .matching import MatchConfig, MatchResult, gradient, objective, register, ssd
from .pulsons import (GaussianScalarKernel, PulsonState, hamiltonian,
                      hamiltonian_drift, rhs_left, rhs_right, shoot,
                      total_momentum)
from .phantom import (PhantomPair, dilate_mask, make_phantom_pair,
                      run_lesion_experiment)

__version__ = "0.1.0"
