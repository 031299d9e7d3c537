"""Exception hierarchy with machine-readable kinds.

Every error carries a ``kind`` tag used by the CLI for its
``error[kind]:`` prefix and its exit-code mapping.
"""


class MimalError(Exception):
    kind = "internal"
    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if self.context:
            extras = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
            return f"{base} ({extras})"
        return base


class UsageError(MimalError):
    """Bad flags, malformed config, impossible option combinations."""

    kind = "usage"
    exit_code = 1


class DataError(MimalError):
    """Anything wrong with the input data itself."""

    kind = "data"
    exit_code = 2


class ParseError(DataError):
    kind = "parse"


class ShapeError(DataError):
    kind = "shape"


class PairingError(DataError):
    kind = "pairing"


class FoldError(DataError):
    kind = "fold"


class InputError(DataError):
    """Loss-domain violations (labels outside {0,1}, negative counts)."""

    kind = "input"


class NumericError(MimalError):
    """Non-finite intermediates, singular systems that resisted repair."""

    kind = "numeric"
    exit_code = 3


class OptimizerError(NumericError):
    """Divergence or breakdown inside the saddle solver."""

    kind = "optimizer"


class VarianceError(NumericError):
    """Too few holdout rows to form a sample variance."""

    kind = "variance"
