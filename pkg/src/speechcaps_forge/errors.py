"""Exception types shared across the toolchain."""


class ForgeError(Exception):
    """Base class for all toolchain errors."""


# corpus
class SchemaError(ForgeError):
    """A manifest record is missing a field or carries a wrong-typed value."""


class DuplicateId(ForgeError):
    """Two records in one manifest share an id."""


class MissingAudio(ForgeError):
    """A record's audio_path cannot be resolved."""


class UnsupportedFormat(ForgeError):
    """Audio file is not a supported PCM WAV variant."""


class CorruptFile(ForgeError):
    """Audio file is malformed or truncated."""


# mixer
class PoolTooSmall(ForgeError):
    """The utterance pool has too few distinct eligible speakers."""


class UtteranceTooShort(ForgeError):
    """Sampled utterances cannot satisfy the overlap bounds even after clamping."""


# prosody
class EmptySignal(ForgeError):
    """An operation received a zero-length waveform."""


# labeler
class PopulationTooSmall(ForgeError):
    """Too few measurements in scope to form non-empty percentile bands."""


class DegenerateDistribution(ForgeError):
    """Band cut points cannot be ordered (e.g. all values identical)."""


class MissingThresholds(ForgeError):
    """No thresholds available for an (attribute, scope) combination."""


# promptgen
class TemplateError(ForgeError):
    """A prompt template left a placeholder unresolved."""


class MissingLabels(ForgeError):
    """A clip segment lacks one of the attribute labels QA generation needs."""


# judge
class BackendUnavailable(ForgeError):
    """The judge backend cannot be reached or is misconfigured."""


class UnparseableReply(ForgeError):
    """The judge backend kept returning replies outside the YES/NO contract."""


class ExcessiveJudgeFailures(ForgeError):
    """More records failed judging than the configured fraction allows."""


# metrics
class KeyMismatch(ForgeError):
    """A verdict references a (clip_id, question) absent from the QA manifest."""


# pipeline
class MissingUpstream(ForgeError):
    """A stage input artifact does not exist."""


class StaleUpstream(ForgeError):
    """An upstream artifact changed after its consumers were produced."""


class ConfigError(ForgeError):
    """Run configuration is invalid."""
