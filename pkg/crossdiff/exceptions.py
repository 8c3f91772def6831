"""
Error hierarchy for the crossdiff package.

Every error knows the CLI exit code it maps to and how to render itself as
the machine-readable record written to stderr.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_ORACLE = 4


class CrossDiffusionError(Exception):
    """Base class for all errors raised by crossdiff"""
    exit_code = EXIT_VALIDATION

    def to_record(self):
        return {
            'error': type(self).__name__,
            'message': str(self),
            'exit_code': self.exit_code,
        }


class InvalidStateError(CrossDiffusionError, ValueError):
    """A density or entropy variable is not finite"""


class DomainError(CrossDiffusionError, ValueError):
    """A point lies outside the region an operation is defined on"""


class PreconditionError(CrossDiffusionError):
    """A criterion was applied outside the hypotheses it is proved under"""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

    def to_record(self):
        record = super().to_record()
        if self.report is not None:
            record['report'] = self.report.to_dict()
        return record


class ConfigError(CrossDiffusionError, ValueError):
    """Schema violation in a configuration document"""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key

    def to_record(self):
        record = super().to_record()
        record['key'] = self.key
        return record


class AdmissibilityError(CrossDiffusionError):
    """Parameters fail the conditions needed for a bounded solution"""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report

    def to_record(self):
        record = super().to_record()
        record['report'] = self.report.to_dict()
        return record


class InvalidInitialDataError(CrossDiffusionError, ValueError):
    """Initial densities are not in the open triangle and rescaling is off"""


class NewtonConvergenceError(CrossDiffusionError):
    """Newton iteration did not reach the residual tolerance"""
    exit_code = EXIT_NUMERICAL

    def __init__(self, message, iterate, residual, iterations):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.iterations = iterations

    def to_record(self):
        record = super().to_record()
        record['residual'] = self.residual
        record['iterations'] = self.iterations
        return record


class TimeStepUnderflowError(CrossDiffusionError):
    """Step size fell below tau_min; the partial run is attached"""
    exit_code = EXIT_NUMERICAL

    def __init__(self, message, trajectory, state, initial=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.state = state
        self.initial = initial

    def to_record(self):
        record = super().to_record()
        record['t'] = self.state.t
        record['steps'] = len(self.trajectory)
        return record


class OracleDisagreementError(CrossDiffusionError):
    """The closed-form criterion and the spectral scan disagree"""
    exit_code = EXIT_ORACLE

    def __init__(self, message, details):
        super().__init__(message)
        self.details = details

    def to_record(self):
        record = super().to_record()
        record['details'] = self.details
        return record
