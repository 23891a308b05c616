"""Iteration logs shared by optimizers and trainers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("iter", "f", "grad_norm", "step", "ls_count", "wall_ms")


def fmt(x) -> str:
    """Float with 17 significant digits (round-trips float64); ints and strings pass through."""
    if isinstance(x, str) or (isinstance(x, (int, np.integer)) and not isinstance(x, bool)):
        return str(x)
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


@dataclass
class Trace:
    """One row per outer iteration: (iter, f, grad_norm, step, ls_count, wall_ms)."""

    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def log(self, it, f, grad_norm, step=0.0, ls_count=0):
        wall = (time.perf_counter() - self._t0) * 1e3
        self.rows.append((int(it), float(f), float(grad_norm), float(step), int(ls_count), wall))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        k = COLUMNS.index(name)
        return [r[k] for r in self.rows]

    def extend(self, other: "Trace", offset=None):
        base = len(self.rows) if offset is None else offset
        for r in other.rows:
            self.rows.append((r[0] + base,) + tuple(r[1:]))

    def to_csv(self, path, timing=False):
        """Write the trace; ``wall_ms`` is zeroed unless ``timing`` so files are reproducible."""
        rows = self.rows if timing else [r[:5] + (0,) for r in self.rows]
        write_csv(path, COLUMNS, rows)
