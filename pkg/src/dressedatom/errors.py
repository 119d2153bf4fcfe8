"""Exception types. Anything derived from Refusal maps to CLI exit code 3."""


class Refusal(RuntimeError):
    """A numerical routine declined to produce a result; `report` carries diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = dict(report or {})


class SizeLimitExceeded(Refusal):
    pass


class TrivialModel(Refusal):
    """The atomic Hamiltonian has no bound state below zero."""


class GrazingShell(Refusal):
    pass


class ConfigError(ValueError):
    """Schema violation; `path` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(message)
        self.path = path
