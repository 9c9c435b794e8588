"""Exception hierarchy.

Every exception carries a short ``code`` so the CLI can emit a single
machine-parsable line on failure.
"""


class CumgainError(Exception):
    code = "E_CUMGAIN"


class ContractViolation(CumgainError, ValueError):
    code = "E_CONTRACT"


class SequencingError(CumgainError):
    code = "E_SEQUENCE"


class UsageError(CumgainError, ValueError):
    code = "E_USAGE"


class UndefinedValueError(CumgainError, ArithmeticError):
    code = "E_UNDEFINED"


class IntegrityError(CumgainError):
    code = "E_INTEGRITY"


class ConfigError(CumgainError, ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    code = "E_CONFIG"

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
