"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised for invalid experiment or algorithm configuration.

    Distinct from plain ValueError (bad numeric input) so the CLI can map
    configuration problems to exit code 1 and runtime failures to 2.
    """
