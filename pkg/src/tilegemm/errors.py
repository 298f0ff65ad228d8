"""Exception hierarchy shared by all tilegemm modules."""


class TileGemmError(Exception):
    """Base class for every error raised by tilegemm."""


class ConfigError(TileGemmError, ValueError):
    """Invalid architecture configuration. ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingField(ConfigError):
    pass


class NonPowerOfTwoGrid(ConfigError):
    pass


class ChannelCountExceedsEdge(ConfigError):
    pass


class NonPositiveValue(ConfigError):
    pass


class SelectorOutsideMask(TileGemmError, ValueError):
    pass


class NotMaskExpressible(TileGemmError):
    """The tile set cannot be addressed by a single mask-based group."""


class LayoutError(TileGemmError, ValueError):
    pass


class SizeMismatch(LayoutError):
    pass


class UnknownEncoding(LayoutError):
    pass


class IoFailure(TileGemmError, OSError):
    pass


class ScheduleError(TileGemmError, ValueError):
    pass


class IncompatibleDims(ScheduleError):
    pass


class InvalidPlan(ScheduleError):
    pass


class SpmOverflow(ScheduleError):
    def __init__(self, required, available):
        super().__init__(
            f"scratchpad budget {required} bytes exceeds capacity {available} bytes"
        )
        self.required = required
        self.available = available


class ExecutionError(TileGemmError, RuntimeError):
    pass


class SpmOverflowAtRuntime(ExecutionError):
    pass


class UnmatchedReceive(ExecutionError):
    pass


class PreloadMissingMatrix(ExecutionError):
    pass


class ShapeMismatch(TileGemmError, ValueError):
    pass


class ZeroTraffic(TileGemmError, ValueError):
    pass
