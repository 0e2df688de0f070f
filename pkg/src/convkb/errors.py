"""Exception hierarchy. The CLI maps each family to an exit code."""


class ConvKBError(Exception):
    pass


class ConfigError(ConvKBError, ValueError):
    """Invalid hyperparameters or inconsistent parameter shapes."""


class DataError(ConvKBError):
    """Unusable dataset or checkpoint contents."""


class ParseError(DataError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DuplicateTripleError(DataError, ValueError):
    def __init__(self, split, triple):
        self.split = split
        self.triple = triple
        super().__init__(f"duplicate triple in {split} split: {triple}")


class SamplingError(DataError, RuntimeError):
    pass


class CheckpointError(DataError):
    pass


class NumericalError(ConvKBError, ArithmeticError):
    pass


class EvaluationError(NumericalError):
    pass
