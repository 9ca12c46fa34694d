# Exception hierarchy shared by all subpackages


class SSDNError(Exception):
    """Base class for errors raised by SSDN Lab"""


class ContractViolation(SSDNError, ValueError):
    """A precondition of an operation does not hold (shapes, ranges, names)."""


class FormatError(SSDNError, ValueError):
    """A data file or checkpoint container is malformed."""


class DegenerateInputError(SSDNError, ValueError):
    """An analysis input has no variance to work with."""


class NonFiniteError(SSDNError, FloatingPointError):
    """A recorded tape value contains NaN or infinity."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"Non-finite value produced by node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class ConfigError(ContractViolation):
    """Invalid experiment configuration, located by its dotted key path."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location
