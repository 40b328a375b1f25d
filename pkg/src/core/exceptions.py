"""
Exception hierarchy for the recommender pipeline.

Every error carries an exit code so the CLI can map failures to
1 (user error) or 2 (internal error).
"""

from typing import Any, Dict, List, Optional


class RecommenderError(Exception):
    """Base class for all domain errors"""

    exit_code: int = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.message,
            "type": type(self).__name__,
            "exit_code": self.exit_code,
            **{k: v for k, v in self.details.items() if v is not None},
        }


class DataParseError(RecommenderError):
    """Malformed row in an interaction or attribute file"""

    def __init__(self, message: str, line: int, path: Optional[str] = None):
        super().__init__(f"line {line}: {message}", line=line, path=path)
        self.line = line


class SchemaError(RecommenderError):
    """Values parse but violate the declared schema"""


class SynthConfigError(RecommenderError):
    """Synthetic corpus configuration cannot be satisfied"""


class EmbeddingIndexError(RecommenderError):
    """Index outside an embedding table"""

    def __init__(self, table: str, index: int, size: int):
        super().__init__(
            f"index {index} out of range for {table} with {size} rows",
            table=table, index=index, size=size,
        )
        self.table = table
        self.index = index


class ShapeError(RecommenderError):
    """Inconsistent tensor or block dimensions"""


class EncodeError(RecommenderError):
    """A sequence cannot be encoded (e.g. it is empty)"""


class NumericError(RecommenderError):
    """Non-finite value or failed factorization"""

    exit_code = 2

    def __init__(self, message: str, coordinate: Optional[str] = None):
        super().__init__(message, coordinate=coordinate)
        self.coordinate = coordinate


class SamplingError(RecommenderError):
    """No eligible item left to sample"""


class TrainingDivergedError(RecommenderError):
    """Loss became non-finite during optimization"""

    exit_code = 2

    def __init__(self, epoch: int, batch: int, param_norm: float, loss: float):
        super().__init__(
            f"non-finite loss {loss} at epoch {epoch}, batch {batch} "
            f"(parameter norm {param_norm:.4g})",
            epoch=epoch, batch=batch, param_norm=param_norm,
        )
        self.epoch = epoch
        self.batch = batch
        self.param_norm = param_norm


class CheckpointCorruptError(RecommenderError):
    """Checkpoint file cannot be decoded"""


class CheckpointIncompatibleError(RecommenderError):
    """Checkpoint was written under an incompatible configuration"""

    def __init__(self, fields: List[str], message: Optional[str] = None):
        super().__init__(
            message or f"checkpoint incompatible with config on fields: {', '.join(fields)}",
            fields=fields,
        )
        self.fields = fields


class ProtocolError(RecommenderError):
    """Evaluation protocol cannot be honored"""


class ConfigError(RecommenderError):
    """Invalid configuration key or value"""

    def __init__(self, message: str, key_path: Optional[str] = None, suggestion: Optional[str] = None):
        if suggestion:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message, key_path=key_path, suggestion=suggestion)
        self.key_path = key_path
        self.suggestion = suggestion
