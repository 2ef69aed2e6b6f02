"""Exception hierarchy shared across the package."""


class RiderScopeError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(RiderScopeError):
    """Invalid box/frame geometry (degenerate or non-intersecting regions)."""


class ImageError(RiderScopeError):
    """Invalid pixel data passed to an image operation."""


class DetectorError(RiderScopeError):
    """Detector backend failure (load or inference)."""


class DetectorLoadError(DetectorError):
    """A detector backend could not be constructed from its config."""


class BackboneError(RiderScopeError):
    """Feature-extractor backbone failure (load, shape contract, inference)."""


class StoreError(RiderScopeError):
    """Segment store failure (missing segment, unwritable root, bad record)."""


class SegmentNotFound(StoreError):
    """A segment id does not exist in the store."""


class ManifestError(RiderScopeError):
    """Dataset manifest cannot be built or parsed."""


class TrainingError(RiderScopeError):
    """Training aborted (empty split, non-finite loss, bad phase config)."""


class EvaluationError(RiderScopeError):
    """Evaluation inputs are inconsistent (length mismatch, missing frames)."""
