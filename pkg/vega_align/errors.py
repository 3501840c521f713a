"""
vega-align - Errors

Exception hierarchy shared by every module. Validation failures also
subclass ValueError so callers can treat them like any bad argument;
the CLI maps them to exit code 1 and everything else to exit code 2.
"""

from __future__ import annotations


class VegaError(Exception):
    """Base class for all vega-align failures."""


class ShapeError(VegaError, ValueError):
    """Tensor or parameter extents do not line up."""


class DatasetError(VegaError, ValueError):
    """A dataset directory, manifest or file failed to load."""


class CheckpointError(VegaError, ValueError):
    """A checkpoint file is malformed or incompatible."""


class ProbeError(VegaError, ValueError):
    """The least-squares depth probe could not be fitted."""


class TrainingError(VegaError):
    """Training diverged or a run could not proceed."""


class AlignmentError(VegaError, ValueError):
    """Cosine alignment received a zero-norm row."""


class CameraError(VegaError, ValueError):
    """A camera has zero focal length or no valid viewing direction."""


class ConfigurationError(VegaError, ValueError):
    """Inputs to a run are inconsistent (missing teacher, mismatched dimensions)."""
