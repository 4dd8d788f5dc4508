"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class HostingCapacityError(Exception):
    code = "E_HOSTCAP"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class FeederParseError(HostingCapacityError):
    code = "E_PARSE"


class FeederValidationError(HostingCapacityError):
    code = "E_VALIDATION"


class SingularAdmittanceError(HostingCapacityError):
    code = "E_SINGULAR"


class NonConvergenceError(HostingCapacityError):
    code = "E_NONCONVERGENCE"


class VoltageCollapseError(HostingCapacityError):
    code = "E_COLLAPSE"


class NoHeadroomError(HostingCapacityError):
    """The voltage limit does not exceed the base-case voltage at some load."""

    code = "E_NO_HEADROOM"


class AllUnboundedError(HostingCapacityError):
    code = "E_UNBOUNDED"


class BracketError(HostingCapacityError):
    code = "E_BRACKET"


class ConfigError(HostingCapacityError):
    code = "E_CONFIG"
