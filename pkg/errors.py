"""
Exception hierarchy for the perturb-and-MAP toolkit.

Library code raises these; the CLI maps them to exit codes.
"""


class PMapError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 2


class InvalidArgumentError(PMapError, ValueError):
    """A configuration, prefix, parameter or file does not fit the model"""


class ResourceLimitError(PMapError):
    """An enumeration would exceed the configured configuration cap"""

    exit_code = 3


class InfeasibleModelError(PMapError):
    """Every configuration of the model is forbidden"""


class UnsupportedModelError(PMapError):
    """The selected solver cannot handle this model (non-binary, non-submodular)"""


class DomainError(PMapError, ValueError):
    """A numeric parameter lies outside the range where a bound is valid"""


class CorruptTableError(PMapError):
    """A perturbation table does not match the model it is applied to"""


class DatasetParseError(PMapError):
    """A CSV dataset is missing columns or holds non-numeric values"""


class SolverError(PMapError):
    """The max-flow backend failed on a network it was handed"""
