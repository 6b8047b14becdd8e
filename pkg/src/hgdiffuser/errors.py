"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""


class HGDError(Exception):
    exit_code = 1


class InvalidArgument(HGDError, ValueError):
    exit_code = 2


class ConfigError(HGDError):
    exit_code = 2


class ParseError(HGDError):
    """Malformed dataset/config file; message names the file and field path."""

    exit_code = 2

    def __init__(self, path, field: str, detail: str = ""):
        self.path = str(path)
        self.field = field
        msg = f"{self.path}: field '{field}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class VersionError(ParseError):
    pass


class ShapeMismatch(HGDError):
    exit_code = 2


class DataInfeasible(HGDError):
    exit_code = 3


class NoContactError(DataInfeasible):
    pass


class RegionInfeasibleError(DataInfeasible):
    pass


class NumericalFailure(HGDError):
    exit_code = 4

    def __init__(self, msg: str, *, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(msg)


class SamplerDivergence(NumericalFailure):
    def __init__(self, level: int):
        self.level = level
        super().__init__(f"sampler state became non-finite at level {level}")
