"""Exception hierarchy shared by all modules."""


class MorphoError(Exception):
    """Base class for errors raised by morphofem."""


class SingularTensor(MorphoError, ValueError):
    pass


class InvalidGrowth(MorphoError, ValueError):
    pass


class InvalidMaterial(MorphoError, ValueError):
    pass


class NonPositiveJacobian(MorphoError):
    """An element (or material point) has been inverted.

    ``cells`` lists the offending cell ids when known.
    """

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = [] if cells is None else list(cells)


class InvalidGeometry(MorphoError, ValueError):
    pass


class PairingFailure(MorphoError):
    def __init__(self, message, unmatched=None):
        super().__init__(message)
        self.unmatched = [] if unmatched is None else list(unmatched)


class MeshValidationError(MorphoError):
    pass


class SingularSystem(MorphoError):
    pass


class ContinuationStalled(MorphoError):
    pass


class NoDominantMode(MorphoError):
    pass


class ConfigError(MorphoError, ValueError):
    pass
