class HdrRdoError(Exception):
    pass


class Y4mError(HdrRdoError, ValueError):
    pass


class TruncatedFrameError(Y4mError):
    pass


class DomainError(HdrRdoError, ValueError):
    pass


class DimensionMismatchError(HdrRdoError, ValueError):
    pass


class CurveError(HdrRdoError, ValueError):
    pass


class NoOverlapError(CurveError):
    pass


class ConfigurationError(HdrRdoError, ValueError):
    pass


class MetricError(HdrRdoError, ValueError):
    pass


class EncodeError(HdrRdoError, RuntimeError):
    def __init__(self, message: str, *, diagnostics: str = "") -> None:
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        return f"{super().__str__()}\n{self.diagnostics}"


class EncodeTimeoutError(EncodeError):
    pass
