"""Append-only metrics CSV.

One fixed schema for every stage and variant so curves are directly
comparable. Numbers print with 9 significant digits; absent fields are
blank. Rows must arrive in strictly increasing (stage, step) order, which an
open writer enforces even across process restarts by reading the tail of an
existing file.
"""
from __future__ import annotations

import os

from ..errors import MetricsSchemaError

COLUMNS = ("step", "stage", "loss", "grad_similarity", "grad_conflict",
           "expert_id", "mean_normalized_score", "seed")
HEADER = ",".join(COLUMNS)
STAGES = ("1", "2", "3", "eval")


def _fmt(x) -> str:
    return "%.9g" % float(x)


class MetricsWriter:
    def __init__(self, path: str, seed: int):
        self.path = path
        self.seed = int(seed)
        self._last: tuple[int, int] | None = None
        if os.path.exists(path) and os.path.getsize(path) > 0:
            with open(path) as f:
                lines = [ln.rstrip("\n") for ln in f if ln.strip()]
            if lines[0] != HEADER:
                raise MetricsSchemaError(
                    f"{path} has header {lines[0]!r}; expected {HEADER!r}")
            if len(lines) > 1:
                tail = lines[-1].split(",")
                if len(tail) != len(COLUMNS):
                    raise MetricsSchemaError(f"{path}: malformed last row")
                self._last = (STAGES.index(tail[1]), int(tail[0]))
        else:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w") as f:
                f.write(HEADER + "\n")

    def emit(self, step: int, stage, loss=None, grad_similarity=None,
             grad_conflict=None, expert_id=None,
             mean_normalized_score=None) -> None:
        stage = str(stage)
        if stage not in STAGES:
            raise MetricsSchemaError(f"unknown stage {stage!r}")
        key = (STAGES.index(stage), int(step))
        if self._last is not None and key <= self._last:
            raise MetricsSchemaError(
                f"row (stage {stage}, step {step}) not after {self._last}")
        cells = [
            str(int(step)), stage,
            "" if loss is None else _fmt(loss),
            "" if grad_similarity is None else _fmt(grad_similarity),
            "" if grad_conflict is None else _fmt(grad_conflict),
            "" if expert_id is None else str(int(expert_id)),
            "" if mean_normalized_score is None else _fmt(mean_normalized_score),
            str(self.seed),
        ]
        with open(self.path, "a") as f:
            f.write(",".join(cells) + "\n")
        self._last = key

    def next_step(self, stage) -> int:
        """Next free step index within a stage (0 if none logged yet)."""
        rank = STAGES.index(str(stage))
        if self._last is not None and self._last[0] == rank:
            return self._last[1] + 1
        return 0


def read_rows(path: str) -> list[dict]:
    """Parse a metrics file back into dicts (strings; blanks become None)."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != HEADER:
        raise MetricsSchemaError(f"{path}: bad or missing header")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(COLUMNS):
            raise MetricsSchemaError(f"{path}: malformed row {ln!r}")
        rows.append({c: (v if v != "" else None) for c, v in zip(COLUMNS, cells)})
    return rows
