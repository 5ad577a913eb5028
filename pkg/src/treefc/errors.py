"""Exception hierarchy shared by every module of the package."""


class TreeFCError(Exception):
    """Base class. ``exit_code`` is used by the command line front-end."""

    exit_code = 1


class ConfigError(TreeFCError):
    exit_code = 2


class DataError(TreeFCError):
    exit_code = 3


class TrainingError(TreeFCError):
    exit_code = 4


# typing / expression errors


class ExprError(DataError):
    pass


class UnitMismatch(ExprError):
    def __init__(self, path, message):
        self.path = tuple(path)
        super().__init__(f"unit mismatch at {'/'.join(map(str, self.path)) or 'root'}: {message}")


class UnknownColumn(ExprError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown column {name!r}")


class PowerOutOfRange(ExprError):
    def __init__(self, path, power, cap):
        self.path = tuple(path)
        super().__init__(f"GeV power {power} outside [-{cap}, {cap}] at {'/'.join(map(str, self.path)) or 'root'}")


class Infeasible(ExprError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, text, position, message):
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


# dataset errors


class MissingUnit(DataError):
    pass


class BadLabel(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnexpectedHeader(DataError):
    pass


class InvalidParams(ConfigError):
    pass


# numerical / training errors


class ZeroTotalWeight(TrainingError):
    pass


class Degenerate(TrainingError):
    pass


class EmptyTraining(TrainingError):
    pass


class NonIntegerAboveOne(ConfigError):
    pass


class DegenerateWeights(TrainingError):
    pass


class DegenerateTargets(TrainingError):
    pass


class EmptyMatrix(TrainingError):
    pass


class ModelParseError(DataError):
    pass
