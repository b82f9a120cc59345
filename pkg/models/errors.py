class MatchvalError(ValueError):
    """Base class for every error raised by matchval."""


class SchemaError(MatchvalError):
    pass


class ParseError(MatchvalError):
    def __init__(self: "ParseError", message: str, row: int) -> None:
        super().__init__(f"row {row}: {message}")
        self.row = row


class DimensionMismatchError(MatchvalError):
    pass


class InfeasibleSpecError(MatchvalError):
    pass


class InstanceTooLargeError(MatchvalError):
    pass


class EmptyMatchError(MatchvalError):
    pass


class MissingPotentialsError(MatchvalError):
    pass


class FoldingError(MatchvalError):
    pass


class FamilyDataError(MatchvalError):
    pass
