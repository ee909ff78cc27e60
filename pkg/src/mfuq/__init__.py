"""Multi-fidelity estimation of high-fidelity output densities from many
low-fidelity runs and a few high-fidelity runs."""

__version__ = "0.1.0"

from .errors import ConfigurationError, MFUQError, MissingArtifactError, NumericError, UsageError  # noqa: E402

__all__ = ["__version__", "MFUQError", "ConfigurationError", "UsageError", "NumericError", "MissingArtifactError"]
