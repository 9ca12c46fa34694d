"""
SSDN Lab

Self-Supervised Dynamic Networks for covariate shift robustness

"""
__version__ = "0.1.0"

from .ssdn import BridgeConfig, Model, build_model, forward_main, forward_ss
from .nn import ArchConfig
from .errors import SSDNError, ContractViolation, FormatError, DegenerateInputError, NonFiniteError, ConfigError
