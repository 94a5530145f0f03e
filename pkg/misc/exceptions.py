class NRegionError(Exception):
    """Base class for every error raised by the pipeline."""


class ParseError(NRegionError):

    def __init__(self, line: int, reason: str) -> None:
        """
        Initializes a ParseError for a malformed interaction record.

        Args:
            line (int): 1-based line number of the offending record.
            reason (str): What is wrong with the record.
        """

        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class EmptyGraphError(NRegionError):
    pass


class GraphError(NRegionError):
    pass


class ParameterError(NRegionError, ValueError):
    pass


class SamplingError(NRegionError):
    pass


class EmptyPoolError(SamplingError):
    """Every user's negative pool is empty under the requested region restriction."""


class TrainingDiverged(NRegionError):
    pass


class ConfigError(NRegionError):
    pass


class MissingArtifact(NRegionError):

    def __init__(self, path, hint: str = "") -> None:
        self.path = str(path)
        message = f"missing artifact {self.path}"
        super().__init__(f"{message} ({hint})" if hint else message)


class StageError(NRegionError):

    def __init__(self, stage: str, cause: Exception) -> None:
        """
        Initializes a StageError wrapping the failure of one pipeline stage.

        Args:
            stage (str): Name of the stage that failed.
            cause (Exception): The original exception.
        """

        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause.__class__.__name__}: {cause}")
