class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """An iterative numerical routine failed to converge."""

    def __init__(self, message, sweeps=None):
        super().__init__(message)
        self.sweeps = sweeps


class RankExceededError(ValueError):
    """A layer was asked to export losslessly at a rank it does not have."""

    def __init__(self, ratio, k):
        super().__init__(f"numerical rank exceeds k={k}: s[k]/s[0] = {ratio:.3e}")
        self.ratio = ratio
        self.k = k


class ManifestError(ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class CheckpointError(ValueError):
    pass
