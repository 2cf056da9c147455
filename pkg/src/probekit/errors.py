"""Exception hierarchy shared by every probekit module."""

from __future__ import annotations


class ProbekitError(Exception):
    """Base class for all toolkit errors."""


class InputError(ProbekitError):
    """Malformed configuration, mesh, or data file."""


class MeshInvariantError(InputError):
    """A surface mesh violates closedness, orientation, or manifoldness."""


class AmbiguousPoint(ProbekitError):
    """Point lies within mesh tolerance of a surface; inside/outside is undecidable."""


class Tangential(ProbekitError, UserWarning):
    """Needle grazes the obstacle boundary within mesh tolerance; issued as a warning."""


class SingularPoint(ProbekitError):
    """Evaluation at the source point of a fundamental solution."""


class NearSurface(ProbekitError):
    """Target point closer to a surface than the near-surface exclusion radius."""


class NearSurfaceEvaluation(NearSurface):
    """Layer-potential evaluation requested inside the exclusion radius."""


class IllConditioned(ProbekitError):
    """Boundary-element system too ill-conditioned to trust."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class BasisMismatch(ProbekitError):
    """Trace vectors and DtN matrices live on different boundary bases."""


class FingerprintMismatch(BasisMismatch):
    """Stored mesh fingerprint differs from the geometry in use."""


class DomainMismatch(ProbekitError):
    """Objects built for different domains or source points were combined."""


class NestingViolation(ProbekitError):
    """Domains are not strictly nested as required."""


class PolePlacementFailure(ProbekitError):
    """Exterior continuation of a needle could not be constructed."""


class FitStagnation(ProbekitError, UserWarning):
    """Needle-sequence fit errors stopped decreasing; issued as a warning."""


class NotConverged(ProbekitError):
    """An indicator sequence failed the plateau criterion."""

    def __init__(self, message: str, stages=None):
        super().__init__(message)
        self.stages = list(stages) if stages is not None else []


class TailTooLarge(ProbekitError):
    """Truncated series tail bound exceeds the requested tolerance."""

    def __init__(self, message: str, bound: float):
        super().__init__(f"{message} (tail bound {bound:.3e})")
        self.bound = bound
