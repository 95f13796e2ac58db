"""Result rows and their CSV form (17 significant digits, fixed column order)."""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path

COLUMNS = ("design-index", "estimator-tag", "run-index", "value", "std-err", "N", "M", "seconds")


@dataclass(frozen=True)
class ResultRow:
    design: int
    estimator: str
    run: int
    value: float
    std_err: float
    n: int
    m: int
    seconds: float = 0.0


class IncompleteTable(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            if not (math.isfinite(r.value) and math.isfinite(r.std_err)):
                raise ValueError(f"non-finite result for design {r.design}, {r.estimator}")
            w.writerow([_fmt(v) for v in astuple(r)])
    return path


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != COLUMNS:
            raise ValueError(f"unexpected header {header}")
        return [ResultRow(int(d), e, int(r), float(v), float(s), int(n), int(m), float(t))
                for d, e, r, v, s, n, m, t in reader]


def check_complete(rows) -> tuple[list[int], list[str], list[int]]:
    """Verify the design x estimator x run cross product (oracle rows use run 0 only)."""
    designs = sorted({r.design for r in rows})
    ests = sorted({r.estimator for r in rows if r.estimator != "oracle"})
    runs = sorted({r.run for r in rows if r.estimator != "oracle"})
    if designs != list(range(len(designs))):
        raise IncompleteTable("design indices are not contiguous from 0")
    have = {(r.design, r.estimator, r.run) for r in rows}
    missing = [(d, e, k) for d in designs for e in ests for k in runs if (d, e, k) not in have]
    if missing:
        raise IncompleteTable(f"{len(missing)} missing rows, first {missing[0]}")
    oracle = {r.design for r in rows if r.estimator == "oracle"}
    if oracle and oracle != set(designs):
        raise IncompleteTable("oracle rows cover only some designs")
    return designs, ests, runs
