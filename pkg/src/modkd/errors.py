"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 2 (argparse),
``DataError`` exits 3, ``NumericalError`` exits 4.
"""


class DataError(Exception):
    """Broken or inconsistent on-disk artifacts: datasets, checkpoints, reports."""


class NumericalError(Exception):
    """Non-finite values or degenerate statistics encountered during computation."""
