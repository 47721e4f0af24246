"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class MerankError(Exception):
    """Base class for all package errors."""


class InputError(MerankError, ValueError):
    """Invalid argument value (non-finite score, probability outside (0, 1), ...)."""


class FitError(MerankError):
    """The logistic mapping could not be fitted."""


class ConvergenceError(MerankError, ArithmeticError):
    pass


class UndefinedCorrelationError(InputError):
    """Correlation requested on a constant input."""


class BackendError(MerankError):
    """Failure inside a quality backend (simulated or remote)."""


class UnknownRefError(BackendError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class ProtocolError(BackendError):
    """A remote backend answered with a malformed or out-of-range payload."""


class MemoryBankError(MerankError):
    pass


class DuplicateIdError(MemoryBankError, ValueError):
    pass


class ImmutableAnchorError(MemoryBankError):
    """Attempted to mutate a sealed anchor memory."""


class BankFormatError(MemoryBankError, ValueError):
    """Base for persistence-format problems."""


class MalformedRecordError(BankFormatError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: malformed record ({reason})")


class VersionMismatchError(BankFormatError):
    pass


class ChecksumError(BankFormatError):
    pass
