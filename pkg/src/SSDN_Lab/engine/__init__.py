"""
Tape-based reverse-mode automatic differentiation over numpy arrays.
"""
from .tape import Tape, Var, Gradients, backward
from .gradcheck import grad_check, relative_error
from . import ops
