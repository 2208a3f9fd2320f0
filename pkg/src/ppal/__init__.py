"""Privacy-preserving active learning over streams of user queries.

Bernoulli subsampling followed by frequency-based k-anonymity (with the
frequencies estimated by probabilistic sketches) gives an (epsilon, delta)
differential-privacy guarantee for the queries an active learner releases to
external annotators. The ``harness`` module sweeps the sampling rate and the
anonymity threshold and records accuracy, annotation budget and privacy.
"""

from ppal.errors import ConfigError, DomainError, LedgerError

__all__ = ["ConfigError", "DomainError", "LedgerError"]
__version__ = "0.1.0"
