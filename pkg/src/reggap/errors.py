"""Exception hierarchy for the reggap pipeline.

Every failure mode a caller is expected to handle has its own class so
that CLI exit codes and tests can dispatch on type rather than message.
"""

from __future__ import annotations


class RegGapError(Exception):
    """Base class for all reggap errors."""


# --- array / mask validation -------------------------------------------------

class NonFiniteValue(RegGapError):
    """An array that must be finite contains NaN or Inf."""


# metrics use the same condition under a shorter name
NonFinite = NonFiniteValue


class EmptyDimension(RegGapError):
    """An array has a zero-length spatial or channel dimension."""


class NonBinaryMask(RegGapError):
    """A mask contains values other than 0 and 1."""


class ShapeMismatch(RegGapError):
    """Two arrays that must share spatial dimensions do not."""


class OverlappingRegions(RegGapError):
    """Two region masks claim the same pixel."""


# --- segmentation ------------------------------------------------------------

class UnknownLabel(RegGapError):
    """A label value is missing from the active vocabulary."""


class ParserFailure(RegGapError):
    """The external face parser failed; the cause is chained."""


# --- detection / backbones ---------------------------------------------------

class NoFaceFound(RegGapError):
    """The detector returned zero face boxes."""


class DetectorFailure(RegGapError):
    """The external face detector failed; the cause is chained."""


class ShapeContractViolation(RegGapError):
    """A backbone consumed or produced tensors of unexpected shape."""


class ModelLoadFailure(RegGapError):
    """A frozen model artifact could not be loaded."""


# --- regression head ---------------------------------------------------------

class DimensionMismatch(RegGapError):
    """An embedding does not match the head's input dimension."""


class EmptyDataset(RegGapError):
    """A training or evaluation set contains no usable records."""


class NonFiniteLoss(RegGapError):
    """Training produced a NaN/Inf loss; aborted with diagnostics."""


# --- metrics -----------------------------------------------------------------

class LengthMismatch(RegGapError):
    """Paired metric inputs have different lengths."""


class EmptyInput(RegGapError):
    """A metric was asked to reduce an empty sequence."""


class ZeroVariance(RegGapError):
    """Correlation is undefined because an input is constant."""


# --- manifests / caches ------------------------------------------------------

class MalformedRow(RegGapError):
    """A manifest row failed to parse; message carries the line number."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(RegGapError):
    """Two manifest rows share a record id."""


class MissingImage(RegGapError):
    """A manifest references an image file that does not exist."""


class CacheIntegrityError(RegGapError):
    """An embedding cache file is truncated or corrupt."""


class IncompatibleCheckpoint(RegGapError):
    """A checkpoint's sidecar disagrees with the embedding cache."""
