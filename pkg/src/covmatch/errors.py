"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CovMatchError(Exception):
    exit_code = 3


class ParameterError(CovMatchError, ValueError):
    exit_code = 2


class InputError(CovMatchError, ValueError):
    exit_code = 2


class GenerationError(CovMatchError):
    exit_code = 3


class SingularityError(CovMatchError, ArithmeticError):
    exit_code = 3


class RankDeficiencyError(CovMatchError, ArithmeticError):
    exit_code = 3


class ParityError(CovMatchError, ValueError):
    exit_code = 3


class BranchAmbiguityError(CovMatchError, ArithmeticError):
    exit_code = 3


class ModelMismatchError(CovMatchError):
    exit_code = 3


class DegenerateVariableError(CovMatchError, ValueError):
    exit_code = 3


class UndefinedMetricError(CovMatchError, ValueError):
    exit_code = 3


class BudgetError(CovMatchError):
    exit_code = 4
