"""Exception types shared across the package.

Everything raised on bad user data or bad arguments derives from
XmodalError, so callers (and the CLI) can distinguish "your input is
wrong" from genuine internal bugs.
"""


class XmodalError(Exception):
    """Base class for all errors raised by this package."""


# ---- embedding / manifest files ----

class MalformedHeader(XmodalError):
    """File magic, version, or header fields are invalid."""


class MalformedRecord(XmodalError):
    """A binary record is truncated, misaligned, or not valid UTF-8."""


class MalformedRow(XmodalError):
    """A text-format row has the wrong structure."""


class DimensionMismatch(XmodalError):
    """A vector's length disagrees with the declared dimension."""


class DuplicateId(XmodalError):
    """The same id occurs more than once in a table."""


class DuplicatePair(XmodalError):
    """The same (caption_id, image_id) pair occurs twice in one split."""


class NonFiniteValue(XmodalError):
    """A stored embedding contains NaN or Inf."""


class UnknownSplit(XmodalError):
    """A manifest row names a split other than train/dev/test."""


class UnresolvedId(XmodalError):
    """A manifest references an id missing from an embedding table."""


class IoFailure(XmodalError):
    """Underlying filesystem write/read failed."""


# ---- numeric operations ----

class ShapeMismatch(XmodalError):
    """Array shapes are inconsistent with each other or with params."""


class NonFiniteInput(XmodalError):
    """An input array contains NaN or Inf."""


class TraceMismatch(XmodalError):
    """A backward pass was given a trace from a different forward call."""


class BatchTooSmall(XmodalError):
    """Negative mining needs at least two rows."""


# ---- training / checkpoints ----

class EmptyDataset(XmodalError):
    """Training was asked to run on zero pairs."""


class ConfigMismatch(XmodalError):
    """A checkpoint's architecture disagrees with the given config."""


class MissingOptimizerState(XmodalError):
    """Resume needs a checkpoint that carries optimizer state."""


# ---- inference ----

class ModalityMismatch(XmodalError):
    """An operation got a table of the wrong modality."""


class MissingGroundTruth(XmodalError):
    """A query's ground-truth id is absent from the ranked index."""


class VocabExhausted(XmodalError):
    """More source tags than target vocabulary entries."""
