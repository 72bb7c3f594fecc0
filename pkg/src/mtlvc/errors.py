"""Exception types raised across the package."""


class MtlvcError(Exception):
    """Base class for all package errors."""


class AllSilent(MtlvcError):
    """No analysis window rose above the trimming threshold."""


class TooShort(MtlvcError, ValueError):
    pass


class FeatureFormatError(MtlvcError, ValueError):
    pass


class UnknownSymbol(MtlvcError, KeyError):
    def __init__(self, symbol: str):
        super().__init__(symbol)
        self.symbol = symbol

    def __str__(self) -> str:
        return f"unknown symbol {self.symbol!r}"


class OutOfRange(MtlvcError, ValueError):
    pass


class InvalidStyle(MtlvcError, ValueError):
    pass


class BothPresent(MtlvcError, ValueError):
    pass


class NeitherPresent(MtlvcError, ValueError):
    pass


class CorpusTooSmall(MtlvcError, ValueError):
    pass


class NonFiniteLoss(MtlvcError, FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


class EmptyReference(MtlvcError, ValueError):
    pass


class CheckpointError(MtlvcError, ValueError):
    pass


class ConfigError(MtlvcError, ValueError):
    pass
