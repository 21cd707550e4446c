"""Exception types shared across the package.

Two failure families matter to callers: bad inputs (wrong shapes, invalid
exponents, unknown names) and numerical trouble (non-PSD blocks, singular
solves, runaway recursions). The CLI maps them to distinct exit codes.
"""


class ConfigurationError(ValueError):
    """Invalid sizes, exponents, names, or otherwise malformed inputs."""


class NumericalError(RuntimeError):
    """Failed factorizations, singular or ill-conditioned solves, unstable recursions."""
