"""Exception types shared across the package."""


class DriftnavError(Exception):
    """Base class for all package errors."""


class ScenarioParseError(DriftnavError):
    """Scenario file is missing, unreadable, or not valid YAML."""


class ScenarioValidationError(DriftnavError):
    """A scenario field violates an invariant. Carries the field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateScan(DriftnavError):
    """Too few usable points for scan matching; caller should fall back
    to constant-velocity propagation."""


class EmptyFeatures(DriftnavError):
    """No edge features in the current scan; caller holds the last
    known centroid."""


class DuplicateWaypoint(DriftnavError):
    """Consecutive waypoints coincide; spline fitting is ill-posed."""


class TrackingDiverged(DriftnavError):
    """Cross-track error exceeded the divergence limit during tracking."""


class NonFiniteLoss(DriftnavError):
    """A PPO update produced a non-finite loss. Carries the update and
    minibatch indices."""

    def __init__(self, update_index: int, minibatch_index: int):
        super().__init__(
            f"non-finite loss at update {update_index}, minibatch {minibatch_index}"
        )
        self.update_index = update_index
        self.minibatch_index = minibatch_index


class StepAfterDone(DriftnavError):
    """step() was called on an environment whose episode already ended."""


class LengthMismatch(DriftnavError):
    """Estimated and ground-truth trajectories have different lengths."""
