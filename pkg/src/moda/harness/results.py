"""Result rows and deterministic CSV emission."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from moda.errors import HarnessError

CSV_HEADER = "task_id,strategy,variant,seed,mean_return,std_return,shared_transitions,config_hash"


@dataclass(frozen=True)
class ResultRow:
    task_id: int
    strategy: str
    variant: str
    seed: int
    mean_return: float
    std_return: float
    shared_transitions: int
    config_hash: str


def emit_results(rows: list[ResultRow], path) -> None:
    """Write rows sorted by (task, strategy, variant, seed); same rows in any
    order produce byte-identical files."""
    if not rows:
        raise HarnessError("no result rows to write")
    ordered = sorted(
        rows, key=lambda r: (r.task_id, r.strategy, r.variant, r.seed,
                             r.shared_transitions)
    )
    lines = [CSV_HEADER]
    for r in ordered:
        lines.append(
            f"{r.task_id},{r.strategy},{r.variant},{r.seed},"
            f"{r.mean_return!r},{r.std_return!r},{r.shared_transitions},{r.config_hash}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_results(path) -> list[ResultRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise HarnessError(f"{path} is not a results file")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        rows.append(
            ResultRow(int(parts[0]), parts[1], parts[2], int(parts[3]),
                      float(parts[4]), float(parts[5]), int(parts[6]), parts[7])
        )
    return rows
