"""Domain-invariant adversarial imitation from observations.

The discriminator is split into a stochastic per-frame preprocessor and an
invariant classifier over 4-frame latent windows; mutual-information
penalties keep the latents from identifying which domain an observation
came from.
"""

from .errors import ConfigurationError, ContractError, DivergenceError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "ContractError", "DivergenceError", "UsageError", "__version__"]
