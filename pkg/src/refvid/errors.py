"""Error types shared across the package.

Every error raised by library code derives from RefvidError and carries the
module/operation it came from, so the CLI can report a precise failure site.
"""

from __future__ import annotations


class RefvidError(Exception):
    """Base error; `module` and `op` name the failing operation."""

    module = "refvid"
    op = "?"

    def __init__(self, message: str, *, module: str | None = None, op: str | None = None):
        super().__init__(message)
        if module is not None:
            self.module = module
        if op is not None:
            self.op = op


class ConfigError(RefvidError):
    """Bad configuration: unknown keys, out-of-range values, missing files."""

    module = "config"


class ShapeError(RefvidError):
    """Tensor shape or divisibility violation."""


class DomainError(RefvidError):
    """Scalar argument outside its admissible range."""


class PackingError(RefvidError):
    """No disjoint in-bounds placement found for the reference canvas."""

    module = "masking"
    op = "layout_references"


class UnresolvedLabelError(RefvidError):
    """A subject label does not resolve to exactly one caption token."""

    module = "denoiser"
    op = "bind_subject_values"


class NonFiniteError(RefvidError):
    """A loss or intermediate state became NaN/Inf (divergence signal)."""


class BackendError(RefvidError):
    """A curation backend failed; message names the stage and clip."""

    module = "datapipe"
    op = "curate"


class EmptyRegionError(RefvidError):
    """An operation that needs a nonempty mask/region got an empty one."""


class FormatError(RefvidError):
    """Malformed serialized payload (tensor container, checkpoint, manifest)."""

    module = "mten"
