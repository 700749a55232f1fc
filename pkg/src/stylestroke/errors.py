"""Exception types raised across the package."""


class StyleStrokeError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(StyleStrokeError, ValueError):
    pass


class DomainError(StyleStrokeError, ValueError):
    """Forward evaluation outside an op's mathematical domain (log/sqrt of negatives)."""


class ContractError(StyleStrokeError, RuntimeError):
    pass


class InvalidConfigError(StyleStrokeError, ValueError):
    pass


class ConfigError(StyleStrokeError, ValueError):
    """Mismatched inputs, e.g. text embedding dimension vs. active encoder."""


class DegenerateInputError(StyleStrokeError, ValueError):
    pass


class ResampleDegenerateError(StyleStrokeError, ValueError):
    pass


class UnsupportedOpError(StyleStrokeError, NotImplementedError):
    def __init__(self, op_type, detail=""):
        self.op_type = op_type
        msg = f"unsupported op: {op_type}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ParseError(StyleStrokeError, ValueError):
    pass


class DecodeError(StyleStrokeError, ValueError):
    pass


class UnsupportedFormatError(StyleStrokeError, ValueError):
    pass
