"""Generalized CP tensor decomposition under non-Euclidean losses, fit by
inertial block-randomized stochastic mirror descent with variance-reduced
gradient estimators."""

from .bregman import (GeneratorSpec, RegularizerSpec, bregman_div, generator_grad,
                      generator_value, mirror_prox_step, three_point_check)
from .data import SyntheticSpec, generate, read_tns, write_tns
from .errors import (ConfigError, DataError, DivergenceError, GcpdError,
                     LossDomainError, ParseError, StateError)
from .estimators import (EstimatorState, GradientRequest, batch_gradient,
                         estimate_gradient, full_gradient, vr_diagnostics)
from .losses import LossSpec, link_inverse, loss_deriv, loss_value, objective
from .metrics import LyapunovRecord, MseReport, lyapunov, model_mse, mse, nre
from .solver import (IterationTrace, SolverConfig, TraceRecord, inertial_step,
                     plain_step, run)
from .tensors import (DenseTensor, KruskalModel, SparseTensorCOO, TensorShape,
                      data_fibers, fiber_to_multi_index, khatri_rao_rows,
                      model_fibers, multi_index_to_fiber, unfold)

__version__ = "0.1.0"
