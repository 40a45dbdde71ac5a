class LegFusionError(Exception):
    '''Base class of every error raised by LegFusion'''
    exit_code = 1


# configuration

class ConfigError(LegFusionError):
    exit_code = 2

class ParseError(ConfigError):
    def __init__(self, message:str, line:int=None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)

class ValidationError(ConfigError):
    def __init__(self, key:str, message:str):
        self.key = key
        super().__init__(f"'{key}': {message}")


# data

class DataError(LegFusionError):
    exit_code = 3

class LogFormatError(DataError):
    def __init__(self, filename:str, line:int, message:str):
        self.filename = filename
        self.line = line
        super().__init__(f"{filename}:{line}: {message}")

class TimestampOrderError(LogFormatError):
    pass

class SchemaError(DataError):
    pass

class GapTooLarge(DataError):
    pass

class OutOfRange(DataError):
    pass


# numerics

class NumericalError(LegFusionError):
    exit_code = 4

class NonFinite(NumericalError):
    pass

class SingularInnovation(NumericalError):
    pass

class IllConditioned(NumericalError):
    pass


# recoverable inside a fusion cycle

class MeasurementUnavailable(LegFusionError):
    pass

class NoSamples(MeasurementUnavailable):
    pass

class InsufficientCoverage(MeasurementUnavailable):
    pass

class EmptyBundle(MeasurementUnavailable):
    pass

class DegenerateNeighborhood(MeasurementUnavailable):
    pass
