"""Deterministic CSV metrics emission.

Floats are rendered with repr-stable %.10g so two runs with the same seed
produce byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields


@dataclass
class MetricsRow:
    generation: int
    node: int
    variant: str
    incast: int
    ht: int  # 0/1
    completion_early: int
    completion_hard: int
    completion_on_time: int
    loss_rate: float
    bytes_sent: int
    bytes_received: int
    wall: float
    mse: float
    action: str


COLUMNS = tuple(f.name for f in fields(MetricsRow))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.10g" % v
    return str(v)


def render_csv(rows: list[MetricsRow]) -> str:
    out = io.StringIO()
    out.write(",".join(COLUMNS) + "\n")
    for r in rows:
        out.write(",".join(_fmt(getattr(r, c)) for c in COLUMNS) + "\n")
    return out.getvalue()


def write_csv(rows: list[MetricsRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(render_csv(rows))
