"""Exception hierarchy. CLI maps ``UsageError`` to exit 1 and the rest to exit 2."""


class BiteTransferError(Exception):
    pass


class ConfigurationError(BiteTransferError, ValueError):
    pass


class DegenerateGeometryError(BiteTransferError, ValueError):
    pass


class RegistrationError(BiteTransferError):
    pass


class WindowTooShortError(BiteTransferError, ValueError):
    pass


class InsufficientDataError(BiteTransferError, ValueError):
    pass


class ConvergenceError(BiteTransferError, RuntimeError):
    pass


class DivergenceError(BiteTransferError, FloatingPointError):
    pass


class LayoutMismatchError(BiteTransferError, ValueError):
    pass


class ScenarioError(BiteTransferError, ValueError):
    pass


class UsageError(BiteTransferError):
    pass


class OutputSchemaError(BiteTransferError):
    pass
