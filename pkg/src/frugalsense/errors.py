"""Exception hierarchy shared by all frugalsense modules."""


class FrugalSenseError(Exception):
    """Base class for every error raised by this package."""


class MissingFile(FrugalSenseError, FileNotFoundError):
    pass


class ParseError(FrugalSenseError, ValueError):
    def __init__(self, line: int, message: str = ""):
        self.line = line
        super().__init__(f"line {line}: {message}" if message else f"line {line}")


class DuplicateSlot(FrugalSenseError, ValueError):
    def __init__(self, slot: int):
        self.slot = slot
        super().__init__(f"duplicate slot {slot}")


class EmptyPartition(FrugalSenseError, ValueError):
    pass


class SpanError(FrugalSenseError, ValueError):
    pass


class NotPositiveDefinite(FrugalSenseError, ArithmeticError):
    pass


class LengthMismatch(FrugalSenseError, ValueError):
    pass


class NonPositiveVariance(FrugalSenseError, ValueError):
    pass


class MissingTruth(FrugalSenseError, KeyError):
    def __init__(self, slot: int):
        self.slot = slot
        super().__init__(f"no measurement for slot {slot}")


class ShapeMismatch(FrugalSenseError, ValueError):
    pass


class NonFiniteInput(FrugalSenseError, ValueError):
    pass


class VersionMismatch(FrugalSenseError, ValueError):
    pass


class CorruptPayload(FrugalSenseError, ValueError):
    pass


class EpisodeDone(FrugalSenseError, RuntimeError):
    pass


class InvalidAction(FrugalSenseError, ValueError):
    pass


class BudgetExceedsSpan(FrugalSenseError, ValueError):
    pass


class EmptyBuffer(FrugalSenseError, ValueError):
    pass


class NonFiniteLoss(FrugalSenseError, ArithmeticError):
    pass


class ConfigError(FrugalSenseError, ValueError):
    pass
