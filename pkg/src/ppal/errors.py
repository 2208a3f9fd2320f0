"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A parameter or configuration value is outside its allowed range."""


class DomainError(ValueError):
    """A numeric argument lies outside the domain of a formula."""


class LedgerError(RuntimeError):
    """A bookkeeping contract (release or budget ledger) was violated."""
