"""Exception types shared across the pipeline."""


class GraspForgeError(Exception):
    """Base class for all pipeline errors."""


class ParseError(GraspForgeError):
    """Malformed asset or config file."""


class DegenerateMesh(GraspForgeError):
    """Mesh has no usable triangles or a collapsed bounding box."""


class NoStablePose(GraspForgeError):
    """No hull face supports the center of mass; asset rejected."""


class NoGraspFound(GraspForgeError):
    """Antipodal rejection sampling exhausted its budget."""


class UnknownInstance(GraspForgeError):
    """Instance id not present in the scene layout."""


class EmptyRegistry(GraspForgeError):
    """Asset registry has no entries."""


class NotVisible(GraspForgeError):
    """Object projects into no camera view."""


class PlanRejected(GraspForgeError):
    """Trajectory violates collision or kinematic bounds; caller resamples."""


class TooShort(GraspForgeError):
    """Trajectory has fewer than two steps."""


class QueueClosed(GraspForgeError):
    """Write attempted on a closed shard writer."""


class IoError(GraspForgeError):
    """Storage-level failure (unreadable root, failed persistence)."""


class EmptyStore(GraspForgeError):
    """Corruption injection requested on a store with nothing to corrupt."""


class OutOfBounds(GraspForgeError):
    """Grasp pose outside the declared tokenization bounds."""


class NotSynthetic(GraspForgeError):
    """Flow-matching loss requested for a grounding-only sample."""


class EmptyInput(GraspForgeError):
    """Metric requested over an empty result list."""


class ConfigError(GraspForgeError):
    """Config file or option violates its documented bounds."""
