"""
Error Handling and Display

Exception hierarchy for hypelab with rich error reporting: config errors
are rendered with source highlighting and position tracking, everything
else as a colored one-line message.
"""

from rich.console import Console
from rich.markup import escape
from rich.theme import Theme

console = Console(theme=Theme({"blue": "#39bae5", "red": "#ef7177"}))


class CPos:
    """
    Line/column position of a span inside a source file (1-based).

    Lark reports both single tokens and whole rules with line/column
    metadata; multi-line spans are split per line for display.
    """

    def __init__(
        self, line: int = 1, col: int = 1, end_line: int = 1, end_col: int = 2
    ):
        self.line = line
        self.col = col
        self.end_line = end_line
        self.end_col = end_col

    @classmethod
    def fromtoken(cls, token) -> "CPos":
        """
        Build a position from a lark Token (or anything with the same attributes).
        """
        line = getattr(token, "line", None) or 1
        col = getattr(token, "column", None) or 1
        end_line = getattr(token, "end_line", None) or line
        end_col = getattr(token, "end_column", None) or col + 1
        return cls(line, col, end_line, end_col)

    def split(self) -> list["CPos"]:
        """
        Split a multi-line position span into individual line positions.
        """
        return [
            CPos(
                line=line,
                col=self.col if line == self.line else 1,
                end_line=line,
                end_col=-1 if line != self.end_line else self.end_col,
            )
            for line in range(self.line, self.end_line + 1)
        ]

    def __repr__(self):
        return f"CPos(line={self.line}, col={self.col}, end_line={self.end_line}, end_col={self.end_col})"


class Error(Exception):
    """
    Base error class for everything hypelab raises on purpose.

    Errors are plain exceptions inside the library. The CLI catches them and
    calls `show()`, which prints the location (when known), the offending
    source line with the span underlined, and the error name and message.

    Args:
        message: Human-readable error description
        pos: Line/column span inside `code`
        path: File the error refers to
        code: Source text, used to display the offending line
        name: Override for error type name display
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        pos: CPos | None = None,
        path: str | None = None,
        code: str = "",
        name: str | None = None,
    ):
        super().__init__(message)
        self.message = message
        self.pos = pos
        self.path = path
        self.code = code
        self.name = name or self.__class__.__name__

    def show(self) -> None:
        cpos = self.pos
        if self.path is not None:
            console.print(
                f"[reset][at [blue]{escape(self.path)}[/blue]:{cpos.line if cpos else '?'}:{cpos.col if cpos else '?'}]"
            )
        lines = self.code.splitlines()
        if cpos is not None and lines and 0 < cpos.end_line <= len(lines):
            for _cpos in cpos.split():
                src = lines[_cpos.line - 1]
                _cpos.end_col = _cpos.end_col if _cpos.end_col > 0 else len(src) + 1
                _cpos.end_col = max(_cpos.end_col, _cpos.col + 1)

                start = max(0, _cpos.col - 30)
                end = min(len(src), _cpos.col + 30)
                bg = (
                    " on red"
                    if src[_cpos.col - 1 : _cpos.end_col - 1].strip() == ""
                    else ""
                )

                highlighted = (
                    f"{escape(src[start:_cpos.col-1])}"
                    f"[reset][red{bg}]{escape(src[_cpos.col-1:_cpos.end_col-1])}{' ' if bg else ''}[/red{bg}]"
                    f"{escape(src[_cpos.end_col-1:end])}"
                )
                prefix = "..." if start > 0 else ""
                suffix = "..." if end < len(src) else ""

                console.print(
                    f"[reset][dim][{_cpos.line}][/dim]   {prefix}[reset]{highlighted}{suffix}\n"
                    f"{' ' * len(f'[{_cpos.line}]   {prefix}{src[start:_cpos.col-1]}')}[reset][red bold]{'^' * (_cpos.end_col - _cpos.col)}[/bold red]"
                )

        console.print(
            f"[bold blue]{self.name}[/blue bold]{f': [blue]{escape(self.message)}[/blue]' if self.message else ''}"
        )

    def __str__(self):
        return self.message


class DimensionError(Error):
    pass


class InputError(Error):
    pass


class UsageError(Error):
    pass


class DatasetError(Error):
    pass


class DataParseError(DatasetError):
    pass


class MappingError(Error):
    pass


class FormatError(Error):
    exit_code = 4


class VersionError(FormatError):
    pass


class ConfigError(Error):
    exit_code = 2


class RunFailure(Error):
    exit_code = 3


class OutputError(Error):
    exit_code = 4


class LarkError(ConfigError):
    """
    Handles syntax errors from the Lark config parser.

    Converts lark's UnexpectedInput family into a positioned config error
    with a readable message.
    """

    tokens = {
        "RSQB": "]",
        "LSQB": "[",
        "EQUAL": "=",
        "COMMA": ",",
        "_NL": "end of line",
        "KEY": "key",
        "WORD": "value",
        "SIGNED_NUMBER": "number",
        "ESCAPED_STRING": "string",
    }

    def __init__(self, exc: Exception, path: str | None = None, code: str = ""):
        line = getattr(exc, "line", None)
        col = getattr(exc, "column", None)
        token = getattr(exc, "token", None)
        expected = sorted(getattr(exc, "expected", None) or getattr(exc, "allowed", None) or [])

        if token is not None and getattr(token, "type", "") == "$END":
            message = "Unexpected end of input"
        elif token is not None:
            message = f"Unexpected token '{token}'"
        elif (char := getattr(exc, "char", None)) is not None:
            message = f"Unexpected character '{char}'"
        else:
            message = str(exc).splitlines()[0]

        names = [self.tokens[t] for t in expected if t in self.tokens]
        if names:
            message += f", expected {'one of ' if len(names) > 1 else ''}{', '.join(names)}"

        width = len(str(token)) if token is not None else 1
        pos = CPos(line, col, line, col + max(width, 1)) if line and col and line > 0 else None
        super().__init__(message, pos=pos, path=path, code=code, name="SyntaxError")
