"""Exception taxonomy. Each CLI-visible category maps to its own exit code."""


class TipTrackError(Exception):
    exit_code = 1


class InvalidArgument(TipTrackError, ValueError):
    pass


class ConfigError(TipTrackError, ValueError):
    exit_code = 3


class IngestError(TipTrackError):
    exit_code = 4


class MissingAnnotationError(IngestError, KeyError):
    def __init__(self, sequence_id: int):
        self.sequence_id = sequence_id
        super().__init__(f"no ground-truth mask for frame {sequence_id}")

    def __str__(self) -> str:
        return self.args[0]


class PipelineError(TipTrackError):
    exit_code = 5

    def __init__(self, message: str, sequence_id: int | None = None):
        self.sequence_id = sequence_id
        super().__init__(message)


class NoPrincipalError(TipTrackError, ValueError):
    pass


class FallbackRequired(TipTrackError):
    """Fewer than two skeleton endpoints; the contour rule must be used."""


class EvaluationError(TipTrackError):
    exit_code = 6


class UndefinedMetricError(EvaluationError, ValueError):
    pass


class GenerationError(TipTrackError):
    exit_code = 7


class OutputError(TipTrackError):
    """Refusing to overwrite, or failing to write, an output location."""

    exit_code = 8
