"""Exception hierarchy shared by all modules."""


class OsgoodFlowError(Exception):
    """Base class for every error raised by the package."""


class DomainError(OsgoodFlowError, ValueError):
    """An argument lies outside the domain of a function (negative radius, r <= 0, ...)."""


class DegenerateModulusError(OsgoodFlowError):
    """A composed modulus vanishes (or is not finite) at some positive radius."""


class RangeError(OsgoodFlowError, ValueError):
    """A target value cannot be attained by a monotone integral function.

    ``limit`` carries the finite infimum of the function, i.e. G(0+).
    """

    def __init__(self, message, limit=None):
        super().__init__(message)
        self.limit = limit


class CertificationRefused(OsgoodFlowError):
    """The composed modulus fails the Osgood test, so no uniqueness modulus exists."""


class ValidationError(OsgoodFlowError, ValueError):
    """One or more declared invariants are violated.

    ``violations`` lists every failed invariant by name.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class TemporalDomainError(OsgoodFlowError):
    """No measure snapshot is available at the requested time."""


class IntegrationError(OsgoodFlowError):
    """Field evaluation produced NaN or overflow during time stepping."""

    def __init__(self, message, t=None, species=None, x=None):
        super().__init__(message)
        self.t = t
        self.species = species
        self.x = x


class LookupFailure(OsgoodFlowError, KeyError):
    """The flow map was queried at a point that was never registered."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ResolutionError(OsgoodFlowError):
    """The trajectory grid is too coarse for the requested test function."""


class RegistrationError(OsgoodFlowError):
    """Two trajectories do not share the same registered points or time grid."""


class ScenarioError(OsgoodFlowError):
    """A scenario file cannot be parsed or names an unknown preset."""
