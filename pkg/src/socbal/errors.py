"""Exception types raised across the package."""


class SocbalError(Exception):
    """Base class for all package errors."""


# -- topology -----------------------------------------------------------------


class TopologyError(SocbalError, ValueError):
    pass


class DisconnectedGraph(TopologyError):
    pass


class NoAccessUnit(TopologyError):
    pass


class SelfLoop(TopologyError):
    pass


class NotSymmetric(SocbalError, ValueError):
    pass


# -- battery ------------------------------------------------------------------


class NonPositiveCapacity(SocbalError, ValueError):
    pass


class SocOutOfRange(SocbalError, ValueError):
    pass


class Assumption1Violated(SocbalError):
    """A unit state left the configured [a1, a2] band."""


# -- observers ----------------------------------------------------------------


class TimeBeforeStart(SocbalError, ValueError):
    pass


class MissingReference(SocbalError, ValueError):
    """A pinned unit was evaluated without the global power reference."""


class ForbiddenReference(SocbalError, ValueError):
    """An unpinned unit was handed the global power reference."""


# -- simulation / io ----------------------------------------------------------


class OutOfDomain(SocbalError, ValueError):
    pass


class ParameterValidationError(SocbalError):
    """Observer gains fail the convergence conditions and no override was given."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.conditions if not c.passed)
        super().__init__(f"parameter validation failed: {failed}")


class ParseError(SocbalError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{' at '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ScenarioValidationError(SocbalError, ValueError):
    """Aggregates every semantic problem found in a scenario file."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


class MalformedInput(SocbalError, ValueError):
    pass
