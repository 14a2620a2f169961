"""Zero-touch provisioning, chaining, and orchestration toolkit."""

__version__ = "0.1.0"
