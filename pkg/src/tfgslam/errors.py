"""Exception types raised across the estimator, planner, simulator, and CLI."""


class TfgSlamError(Exception):
    """Base class for all package errors."""


class NotConnected(TfgSlamError):
    """A graph variable has no path to any prior factor."""


class SingularSystem(TfgSlamError):
    """The damped normal equations stayed singular at maximum damping."""


class SingularPoseBlock(TfgSlamError):
    """The pose block of the information matrix is not positive definite."""


class NonPositiveDefinite(TfgSlamError):
    """A matrix required to be positive definite is not."""


class IllegalCompress(TfgSlamError):
    """A pose inside a compression span carries a retained measurement."""


class UnknownLandmark(TfgSlamError):
    """A scan or factor references a landmark id that is not in the map."""


class SamplingExhausted(TfgSlamError):
    """Free-space sampling rejected more than 99% of its attempts."""


class Unreachable(TfgSlamError):
    """No roadmap path exists between the requested nodes."""


class NoReachableCandidate(TfgSlamError):
    """Every scored candidate goal was unreachable."""


class NoFeasibleGoal(TfgSlamError):
    """No scored candidate admits a feasible roadmap path."""


class CollisionWithTruth(TfgSlamError):
    """The simulated robot crossed a ground-truth obstacle edge."""


class ScenarioParseError(TfgSlamError):
    """A scenario file is missing, malformed, or inconsistent."""


class RunFailed(TfgSlamError):
    """A benchmark run aborted; carries the seed and the underlying cause."""

    def __init__(self, seed: int, cause: Exception):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause
