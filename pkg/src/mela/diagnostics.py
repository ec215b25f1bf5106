from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    message: str
    line: Optional[int] = None
    col: Optional[int] = None
    code: str = ""

    def __str__(self):
        where = f"{self.line}:{self.col}: " if self.line is not None else ""
        return f"{where}{self.severity}: {self.message}"

    def to_json(self) -> dict:
        return asdict(self)


def has_errors(diagnostics) -> bool:
    return any(d.severity == ERROR for d in diagnostics)
