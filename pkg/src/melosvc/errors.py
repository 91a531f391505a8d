"""Exception hierarchy.

Every error raised by this package derives from :class:`MelosvcError`.
The command line maps the three broad families to process exit codes:
configuration problems exit with 2, data problems with 3, and stage
failures (training, conversion, synthesis, evaluation) with 4.
"""

from __future__ import annotations


class MelosvcError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ConfigError(MelosvcError):
    """Invalid configuration, command-line arguments, or parameters."""

    exit_code = 2


class DataError(MelosvcError):
    """Invalid, inconsistent, or missing input data."""

    exit_code = 3


class StageError(MelosvcError):
    """A pipeline stage failed.  Carries the failing stage's name."""

    exit_code = 4

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


# -- configuration family ----------------------------------------------------


class ParameterError(ConfigError):
    """A parameter value is outside its legal domain."""


class UnknownKeyError(ConfigError):
    """A config mapping contains keys the schema does not define."""


# -- data family ---------------------------------------------------------------


class IngestError(DataError):
    """An audio file could not be read or decoded."""


class EmptyClipError(DataError):
    """A clip contains no samples."""


class ShortInputError(DataError):
    """Input audio is shorter than one analysis frame or receptive field."""


class DegenerateAudioError(DataError):
    """Audio is silent or otherwise unusable where signal is required."""


class ManifestError(DataError):
    """A dataset manifest is malformed or internally inconsistent."""


class PoolError(DataError):
    """A background-track pool is empty or unusable."""


class LabelError(DataError):
    """Pitch labelling failed for a clip."""


class AlignmentError(DataError):
    """Frame sequences cannot be brought onto a common time grid."""


class ShapeError(DataError):
    """An array has an incompatible shape for the requested operation."""


class GridError(DataError):
    """A spectrogram's frame grid does not match the expected analysis grid."""


# -- stage family ----------------------------------------------------------


class ScheduleError(StageError):
    """Training step bookkeeping was violated (e.g. steps ran backwards)."""

    def __init__(self, message: str):
        super().__init__("schedule", message)


class CompatibilityError(StageError):
    """Two checkpoints or artifacts were produced for different models."""

    def __init__(self, message: str):
        super().__init__("compatibility", message)


class CompositionError(StageError):
    """An evaluation set could not be composed as requested."""

    def __init__(self, message: str):
        super().__init__("testset", message)
