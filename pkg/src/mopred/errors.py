"""Exception types shared across the package."""


class InputError(ValueError):
    """An operation received an input violating its contract."""


class ConfigError(ValueError):
    """A configuration document failed validation.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DivergedError(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic payload."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
