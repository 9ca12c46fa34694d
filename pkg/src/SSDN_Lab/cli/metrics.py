# metrics.csv schema
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

from ..errors import FormatError

HEADER = ("regime", "shift", "severity", "seed", "main_error_pct", "ss_error_pct", "wall_ms")


@dataclass(frozen=True)
class MetricsRow:
    regime: str
    shift: str
    severity: int
    seed: int
    main_error_pct: float
    ss_error_pct: float
    wall_ms: int = 0

    def formatted(self) -> List[str]:
        return [
            self.regime,
            self.shift,
            str(self.severity),
            str(self.seed),
            f"{self.main_error_pct:.4f}",
            f"{self.ss_error_pct:.4f}",
            str(self.wall_ms),
        ]


def write_metrics(path: Union[str, Path], rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEADER)
        for row in rows:
            writer.writerow(row.formatted())


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    """Parses a metrics.csv written by write_metrics"""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != HEADER:
            raise FormatError(f"{path}: header {header} does not match {list(HEADER)}")
        rows = []
        for line, fields in enumerate(reader, start=2):
            if len(fields) != len(HEADER):
                raise FormatError(f"{path}:{line}: expected {len(HEADER)} fields, got {len(fields)}")
            try:
                rows.append(
                    MetricsRow(
                        fields[0],
                        fields[1],
                        int(fields[2]),
                        int(fields[3]),
                        float(fields[4]),
                        float(fields[5]),
                        int(fields[6]),
                    )
                )
            except ValueError as e:
                raise FormatError(f"{path}:{line}: {e}") from e
        return rows

