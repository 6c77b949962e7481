"""Exception types raised across the recognition pipeline."""


class RasmError(Exception):
    """Base class for every error the package raises deliberately."""


class InvalidParameterError(RasmError, ValueError):
    pass


class NoContentError(RasmError):
    """An operation needed ink pixels and found none."""


class ShapeError(RasmError, ValueError):
    pass


class OverlongLabelError(RasmError, ValueError):
    pass


class CorruptLabelError(RasmError, ValueError):
    pass


class ManifestParseError(RasmError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DegenerateBatchError(RasmError, ValueError):
    pass


class InfeasibleConfigError(RasmError, ValueError):
    pass


class InfeasibleTargetError(RasmError, ValueError):
    pass


class InvalidDistributionError(RasmError, ValueError):
    pass


class UndefinedRateError(RasmError, ValueError):
    pass


class CorruptCheckpointError(RasmError):
    def __init__(self, section: str, message: str):
        super().__init__(f"corrupt checkpoint ({section}): {message}")
        self.section = section
