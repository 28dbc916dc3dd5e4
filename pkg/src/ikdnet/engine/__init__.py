from .autodiff import (
    ContractViolation,
    NumericFault,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    apply_primitive,
    backward,
    primitive_table,
)
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import GradCheckReport, grad_check
from .init import parameter_init
from . import ops

__all__ = [
    "ContractViolation", "NumericFault", "ShapeError", "Tape", "Tensor",
    "active_tape", "apply_primitive", "backward", "primitive_table",
    "CheckpointError", "load_tensors", "save_tensors",
    "GradCheckReport", "grad_check", "parameter_init", "ops",
]
