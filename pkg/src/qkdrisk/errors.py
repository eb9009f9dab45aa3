"""Exception hierarchy shared across the package."""


class QkdRiskError(Exception):
    """Base class for all package errors."""


class ConfigError(QkdRiskError):
    """Invalid configuration or parameter outside a module precondition."""


class DataError(QkdRiskError):
    """Input data is missing, malformed or unusable."""


class CsvRowError(DataError):
    """One or more CSV rows were rejected.

    ``rows`` holds ``(line_number, message)`` pairs, line numbers counted from 1
    with the header on line 1.
    """

    def __init__(self, rows):
        self.rows = list(rows)
        preview = "; ".join(f"line {ln}: {msg}" for ln, msg in self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        super().__init__(f"{len(self.rows)} rejected row(s): {preview}{more}")


class DegenerateFitError(DataError):
    """EM cannot separate components, e.g. all-identical data with c > 1."""
