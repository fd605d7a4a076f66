"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DichotomyError(Exception):
    """Base class; ``stage`` is filled in by the pipeline runner."""

    stage: str | None = None


# splitting
class EigenvalueOnCut(DichotomyError):
    pass


class NonConvergence(DichotomyError):
    pass


class NegativeTime(DichotomyError):
    pass


# correspondences
class DimensionMismatch(DichotomyError):
    pass


class SamplerExhausted(DichotomyError):
    pass


# solver
class NonContraction(DichotomyError):
    def __init__(self, kappa: float, msg: str | None = None):
        self.kappa = float(kappa)
        super().__init__(msg or f"Picard map is not contractive: kappa = {kappa:.6g} >= 1")


class MaxIterExceeded(DichotomyError):
    pass


class BoundaryDimensionMismatch(DichotomyError):
    pass


class NonUniformGrid(DichotomyError):
    pass


class IllPosedProblem(DichotomyError):
    pass


# certificates
class GapViolated(DichotomyError):
    def __init__(self, deficit: float, msg: str | None = None):
        self.deficit = float(deficit)
        super().__init__(msg or f"spectral gap violated, deficit = {deficit:.6g}")


class AlphaBelowThreshold(DichotomyError):
    pass


class EmptyTable(DichotomyError):
    pass


class NoAdmissibleEpsHat(DichotomyError):
    pass


# graph transform
class AngleConditionViolated(DichotomyError):
    pass


class DomainEscape(DichotomyError):
    pass


class SpectralConditionViolated(DichotomyError):
    pass


class ThetaNotContractive(DichotomyError):
    pass


class SigmaTooLarge(DichotomyError):
    pass


class OrbitInconsistent(DichotomyError):
    pass


class GridTooCoarse(DichotomyError):
    pass


# nhim
class InvariantFailure(DichotomyError):
    def __init__(self, which: str, msg: str):
        self.which = which
        super().__init__(f"{which}: {msg}")


class TubeEscape(DichotomyError):
    pass


class HypothesisFailure(DichotomyError):
    def __init__(self, name: str, msg: str):
        self.name = name
        super().__init__(f"{name}: {msg}")


class IntersectionFailure(DichotomyError):
    pass


class OrbitLeavesTube(DichotomyError):
    def __init__(self, time: float, msg: str | None = None):
        self.time = float(time)
        super().__init__(msg or f"orbit left the tube at t = {time:.6g}")


class NotOnCenterStable(DichotomyError):
    pass


# problems / cli
class UnknownProblem(DichotomyError):
    pass


class ParamOutOfRange(DichotomyError):
    pass


class ConfigInvalid(DichotomyError):
    pass


class StageFailed(DichotomyError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
