"""Translation-invariant atom-photon model on truncated Hilbert spaces."""

__version__ = "0.1.0"
