"""Exception hierarchy shared by all pczip modules.

Each error class corresponds to one failure category the CLI maps to a
distinct exit code; see cli.EXIT_CODES.
"""


class PczipError(Exception):
    """Base class for all pczip errors."""


class StructuralError(PczipError):
    """Circuit or vtree violates a structural invariant (cycle, dangling
    child, no consistent vtree, non-dense variable indices, ...)."""


class ContractError(PczipError):
    """An operation was called outside its precondition (unvalidated
    circuit, order not a permutation, ...)."""


class NumericalError(PczipError):
    """Non-finite intermediate value surfaced during evaluation."""


class ImpossiblePrefixError(NumericalError):
    """A conditioning prefix has probability zero under the model."""


class PrecisionError(PczipError):
    """Frequency table cannot represent the distribution at the requested
    precision (more in-support symbols than 2**precision slots)."""


class UnencodableSymbolError(PczipError):
    """A symbol with zero quantized frequency was submitted for encoding."""


class CorruptStreamError(PczipError):
    """An entropy-coded stream failed to decode cleanly."""


class ChecksumMismatchError(PczipError):
    """Archive/model checksum disagreement or damaged payload."""


class FormatError(PczipError):
    """A file does not parse as the declared format."""
