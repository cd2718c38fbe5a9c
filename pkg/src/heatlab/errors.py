"""Exception hierarchy shared by all heatlab modules."""


class LabError(Exception):
    """Base class for every error raised by heatlab."""


class InvalidGeometry(LabError):
    pass


class InvalidExhaustion(LabError):
    pass


class InvalidTime(LabError):
    pass


class InvalidInput(LabError):
    pass


class InsufficientData(LabError):
    pass


class InvalidWindow(LabError):
    pass


class InvalidCutoff(LabError):
    pass


class InvalidBall(LabError):
    pass


class InvalidAction(LabError):
    pass


class ExtensionRefused(LabError):
    """The vanishing-trace hypothesis of the extension principle failed."""

    def __init__(self, message, norm):
        super().__init__(message)
        self.norm = norm


class DecompositionFailed(LabError):
    pass


class NotApplicable(LabError):
    """Preconditions of a theorem check are not met (distinct from failure)."""
