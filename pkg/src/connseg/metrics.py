"""Voxel-wise confusion-matrix metrics and result tables."""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InputError
from .voxelcore import as_mask

METRIC_NAMES = ("dsc", "tpr", "fpr", "ppv")


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class SegMetrics:
    """Counts and rates; a rate with a zero denominator is ``None``."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def dsc(self) -> float | None:
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def tpr(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def fpr(self) -> float | None:
        return _ratio(self.fp, self.fp + self.tn)

    @property
    def ppv(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fp)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("tp", "fp", "fn", "tn")}
        d.update({k: getattr(self, k) for k in METRIC_NAMES})
        return d


def evaluate(pred, gt, domain=None) -> SegMetrics:
    """Confusion counts of ``pred`` against ``gt``.

    By default every voxel of the volume is counted. ``domain`` restricts
    counting to a sub-mask, e.g. the lung field.
    """
    p = as_mask(pred, "pred")
    g = as_mask(gt, "gt")
    if p.shape != g.shape:
        raise InputError(f"pred shape {p.shape} != gt shape {g.shape}")
    if domain is not None:
        d = as_mask(domain, "domain")
        if d.shape != p.shape:
            raise InputError("domain shape does not match")
        p, g = p[d], g[d]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return SegMetrics(tp, fp, fn, tn)


def _summary(rows: Mapping[str, SegMetrics]):
    out = {}
    for key in METRIC_NAMES:
        vals = [getattr(m, key) for m in rows.values() if getattr(m, key) is not None]
        if not vals:
            out[key] = (None, None)
        else:
            out[key] = (statistics.fmean(vals), statistics.pstdev(vals) if len(vals) > 1 else 0.0)
    return out


def _pct(v: float | None, digits: int) -> str:
    return "n/a" if v is None or math.isnan(v) else f"{100 * v:.{digits}f}"


def _digits(key: str) -> int:
    return 3 if key == "fpr" else 1


def format_table(rows: Mapping[str, SegMetrics]) -> str:
    """Aligned text table in percent with Mean and Std. rows appended."""
    header = ["Case", "DSC", "TPR", "FPR", "PPV"]
    body = [[name] + [_pct(getattr(m, k), _digits(k)) for k in METRIC_NAMES] for name, m in rows.items()]
    summ = _summary(rows)
    body.append(["Mean"] + [_pct(summ[k][0], _digits(k)) for k in METRIC_NAMES])
    body.append(["Std."] + [_pct(summ[k][1], _digits(k)) for k in METRIC_NAMES])
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def format_csv(rows: Mapping[str, SegMetrics]) -> str:
    """Raw fractions per case plus mean/std rows; ``n/a`` for undefined rates."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "tp", "fp", "fn", "tn", *METRIC_NAMES])
    fmt = lambda v: "n/a" if v is None else repr(v)  # noqa: E731
    for name, m in rows.items():
        w.writerow([name, m.tp, m.fp, m.fn, m.tn, *(fmt(getattr(m, k)) for k in METRIC_NAMES)])
    summ = _summary(rows)
    w.writerow(["mean", "", "", "", "", *(fmt(summ[k][0]) for k in METRIC_NAMES)])
    w.writerow(["std", "", "", "", "", *(fmt(summ[k][1]) for k in METRIC_NAMES)])
    return buf.getvalue()
