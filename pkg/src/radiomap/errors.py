"""Exception hierarchy shared across the package."""


class RadioMapError(Exception):
    """Base class for all package-specific errors."""


# --- scene / domain validation ---

class MaskNotBinary(RadioMapError):
    pass


class BsInsideBuilding(RadioMapError):
    pass


class MaskOverlap(RadioMapError):
    pass


# --- scene generation ---

class PlacementFailure(RadioMapError):
    pass


# --- encoding / ingestion ---

class NonFiniteInput(RadioMapError):
    pass


class OutOfRange(RadioMapError):
    pass


class MissingFile(RadioMapError):
    pass


class CountMismatch(RadioMapError):
    pass


class CorruptRaster(RadioMapError):
    pass


class IoFailure(RadioMapError):
    pass


class SchemaVersionMismatch(RadioMapError):
    pass


# --- diffusion / networks ---

class ShapeMismatch(RadioMapError):
    pass


class DimMismatch(RadioMapError):
    pass


class TOutOfRange(RadioMapError):
    pass


class DtOutOfRange(RadioMapError):
    pass


class StepOutOfRange(RadioMapError):
    pass


class PredictorShapeMismatch(RadioMapError):
    pass


class NonFiniteActivation(RadioMapError):
    pass


# --- training / evaluation ---

class DivergedLoss(RadioMapError):
    pass


class ResumeMismatch(RadioMapError):
    pass


class ZeroReference(RadioMapError):
    pass


class PredictorFailure(RadioMapError):
    pass
