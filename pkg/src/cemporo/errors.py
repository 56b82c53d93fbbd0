"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class FormatError(ValueError):
    """A medium or config file could not be parsed or does not fit the mesh."""


class SolverFailure(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class DegenerateBlockError(RuntimeError):
    def __init__(self, block, family):
        super().__init__(f"weighted mass matrix is singular on block {block} ({family} family)")
        self.block = block
        self.family = family


class RankDeficiencyError(RuntimeError):
    def __init__(self, family, blocks):
        blocks = sorted(set(int(b) for b in blocks))
        super().__init__(f"{family} multiscale basis is rank deficient; offending blocks: {blocks}")
        self.family = family
        self.blocks = blocks


class UndefinedMetricError(ZeroDivisionError):
    pass


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
