"""Dense tensors, reverse-mode differentiation and the Adam optimizer."""

from . import ops
from .tensor import Tape, Tensor, backward, no_tape

__all__ = ["Tape", "Tensor", "backward", "no_tape", "ops"]
