"""Multi-echo MRI reconstruction with structured deep dictionary learning."""

__version__ = "0.1.0"
