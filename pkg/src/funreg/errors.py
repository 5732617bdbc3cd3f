"""Exception types raised across the package."""


class FunregError(Exception):
    """Base class for package errors."""


class DomainError(FunregError, ValueError):
    """Points, windows or intervals that fall outside a valid domain."""


class RankDeficientError(FunregError, ValueError):
    """A design matrix (after penalisation) does not identify every coefficient.

    ``blocks`` names the coefficient blocks involved in the null directions.
    """

    def __init__(self, blocks, detail: str = ""):
        self.blocks = list(blocks)
        msg = "rank-deficient design; unidentified block(s): " + ", ".join(self.blocks)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DataFormatError(FunregError, ValueError):
    """Malformed input file; message carries the offending line numbers."""


class ConfigError(FunregError, ValueError):
    """Invalid run configuration; ``problems`` lists every offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))
