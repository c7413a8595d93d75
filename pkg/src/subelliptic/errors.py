"""Shared exception types."""


class ProbeAssertionError(AssertionError):
    """A quantitative probe failed its declared acceptance window."""


class ZeroGradientError(Exception):
    """Operation undefined at vanishing horizontal gradient for this operator."""
