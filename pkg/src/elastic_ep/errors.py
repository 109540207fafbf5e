"""Exception types shared across the package."""


class ElasticEPError(Exception):
    pass


class ConfigurationError(ElasticEPError):
    """Structures or scenario inputs do not describe a consistent instance."""


class ProtocolError(ElasticEPError):
    """An operation was invoked in a state the membership protocol forbids."""


class CapacityError(ElasticEPError):
    """Active slot capacity cannot cover every logical expert."""


class MissingBackupError(ElasticEPError):
    def __init__(self, experts):
        self.experts = sorted(experts)
        super().__init__(f"no DRAM backup for experts {self.experts}")


class RepairAborted(ElasticEPError):
    """A transfer destination went inactive before its batch was issued."""

    def __init__(self, ranks):
        self.ranks = sorted(ranks)
        super().__init__(f"repair destinations inactive: {self.ranks}")


class TraceFormatError(ElasticEPError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
