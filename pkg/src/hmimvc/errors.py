"""Exception types raised across the toolkit."""


class HmiError(Exception):
    """Base class for every error raised by hmimvc."""


class DimensionError(HmiError, ValueError):
    pass


class DegenerateBatchError(HmiError, ValueError):
    pass


class PoisonedGradientError(HmiError, FloatingPointError):
    def __init__(self, block):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


class LoadError(HmiError, OSError):
    pass


class RatioError(HmiError, ValueError):
    pass


class DerangementError(HmiError, ValueError):
    pass


class DegenerateTemperatureError(HmiError, ArithmeticError):
    pass


class CheckpointError(HmiError, ValueError):
    pass


class TrainingDiverged(HmiError, ArithmeticError):
    """Loss became non-finite or exceeded the explosion guard."""

    def __init__(self, msg, epoch=None, batch=None):
        super().__init__(f"{msg} (epoch={epoch}, batch={batch})")
        self.epoch = epoch
        self.batch = batch


class AssemblyError(HmiError, RuntimeError):
    pass
