"""Exception types shared across the toolkit."""


class NoiseRankError(Exception):
    """Base class for every error raised by this package."""


# --- probability vectors ---------------------------------------------------

class ProbabilityVectorError(NoiseRankError):
    """A sequence failed softmax-distribution validation."""


class TooShort(ProbabilityVectorError):
    """Fewer elements than the operation requires."""


class NegativeEntry(ProbabilityVectorError):
    pass


class NonFinite(ProbabilityVectorError):
    pass


class SumOutOfTolerance(ProbabilityVectorError):
    pass


# --- ranking and selection --------------------------------------------------

class EmptyInput(NoiseRankError):
    pass


class DuplicateId(NoiseRankError):
    pass


class KTooLarge(NoiseRankError):
    """Requested more items than are available."""


# --- dataset files ----------------------------------------------------------

class DatasetError(NoiseRankError):
    pass


class BadMagic(DatasetError):
    pass


class TruncatedFile(DatasetError):
    pass


class CountMismatch(DatasetError):
    pass


class LabelOutOfRange(DatasetError):
    pass


class RowLengthMismatch(DatasetError):
    pass


class NonNumericCell(DatasetError):
    pass


# --- classifier oracles -----------------------------------------------------

class OracleError(NoiseRankError):
    pass


class ShapeMismatch(OracleError):
    pass


class DivergedLoss(OracleError):
    """Training loss became NaN or infinite."""


class MissingId(OracleError):
    pass


class InvalidVector(OracleError):
    pass


class UnsupportedQuery(OracleError):
    """The oracle kind cannot answer this query (e.g. pixels against a table)."""


class CorruptFile(OracleError):
    pass


class ProcessSpawnFailure(OracleError):
    pass


class ProtocolViolation(OracleError):
    """The child process broke the line-JSON contract."""


class QueryTimeout(OracleError):
    pass


# --- attacks ----------------------------------------------------------------

class AnchorOutOfBounds(NoiseRankError):
    pass


class ImageTooSmall(NoiseRankError):
    pass


# --- evaluation -------------------------------------------------------------

class NonPositiveBaseline(NoiseRankError):
    pass


class TooFewPoints(NoiseRankError):
    pass


class DegenerateX(NoiseRankError):
    """Zero variance on the x axis; nothing to regress against."""


class MissingMetric(NoiseRankError):
    pass


class LengthMismatch(NoiseRankError):
    pass


# --- configuration / CLI ----------------------------------------------------

class ConfigError(NoiseRankError):
    """Invalid or unresolvable run configuration (CLI exit code 2)."""
