"""Exception hierarchy for cqstream.

Every error raised on purpose by the library derives from CQStreamError.
The base class is deliberately not a ValueError so that errors raised from
inside pydantic validators keep their own type.
"""


class CQStreamError(Exception):
    pass


class ManifestParseError(CQStreamError):
    """A manifest, trace or spec row could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class LadderValidationError(CQStreamError):
    """A ladder violates one of its structural invariants."""

    def __init__(self, message, segment=None, level=None):
        self.segment = segment
        self.level = level
        parts = []
        if segment is not None:
            parts.append(f"segment {segment}")
        if level is not None:
            parts.append(f"level {level}")
        prefix = f"{', '.join(parts)}: " if parts else ""
        super().__init__(f"{prefix}{message}")


class QualityDomainError(CQStreamError):
    """A quality value lies outside the domain of the requested transform."""


class ObjectiveError(CQStreamError):
    """The objective cannot be used with the ladder's quality convention."""


class PlanInfeasibleError(CQStreamError):
    """No level sequence keeps the buffer inside its bounds."""


class InstanceTooLargeError(CQStreamError):
    """Exhaustive enumeration would exceed the path budget."""


class SimulationConfigError(CQStreamError):
    """Simulation inputs do not fit together."""


class SpecError(CQStreamError):
    """An experiment spec is incomplete or inconsistent."""


class PlanRequestError(CQStreamError):
    """A planning request is internally inconsistent."""
