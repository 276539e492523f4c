"""Exception and warning types raised across kminlab."""


class KminlabError(Exception):
    pass


# groundstate
class NonConvergence(KminlabError):
    pass


class ResolutionError(KminlabError):
    pass


class TruncationWarning(UserWarning):
    pass


# geometry
class EmptyDomain(KminlabError):
    pass


class DisconnectedDomain(KminlabError):
    pass


class WellOutsideClosure(KminlabError):
    pass


class AmbiguousBoundary(KminlabError):
    pass


# energy
class GridMismatch(KminlabError):
    pass


class DomainError(KminlabError, ValueError):
    pass


class ZeroField(KminlabError):
    pass


# minimizer
class IllPosed(KminlabError):
    pass


class StepUnderflow(KminlabError):
    pass


class MaxItersExceeded(UserWarning):
    """Flow hit ``max_iters``; the best field so far is returned with converged=False."""


class AmbiguousMinimum(UserWarning):
    pass


# asymptotics
class RegimeMismatch(KminlabError):
    pass


class DegenerateFit(KminlabError):
    pass


class WindowClipped(UserWarning):
    pass


class TrialOutsideDomain(KminlabError):
    pass


class BracketFailure(KminlabError):
    pass


# harness
class ConfigError(KminlabError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
