"""Renderer-independent plot documents and the generators that build them.

A ``PlotDocument`` serializes to JSON (``to_json``) and is the canonical
stage-4 artifact; SVG is a convenience rendering of it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DeliverableError
from ..stats import SummaryTable, StatsBundle

SCALES = ("linear", "log2", "log10")


def _clean(xs) -> list:
    out = []
    for v in xs:
        if isinstance(v, str):
            out.append(v)
        else:
            v = float(v)
            out.append(None if math.isnan(v) else v)
    return out


def _unclean(xs) -> list | None:
    if xs is None:
        return None
    return [math.nan if v is None else v for v in xs]


@dataclass
class Series:
    label: str
    x: list
    y: list[float]
    band_lo: list[float] | None = None
    band_hi: list[float] | None = None
    whisker_lo: list[float] | None = None
    whisker_hi: list[float] | None = None
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        if len(self.x) != n:
            raise DeliverableError(f"series {self.label!r}: x has {len(self.x)} points, y has {n}")
        for name in ("band_lo", "band_hi", "whisker_lo", "whisker_hi"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise DeliverableError(f"series {self.label!r}: {name} has {len(arr)} points, y has {n}")

    def check_bands(self, tol: float = 1e-9) -> bool:
        if self.band_lo is None or self.band_hi is None:
            return True
        for lo, y, hi in zip(self.band_lo, self.y, self.band_hi):
            if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in (lo, y, hi)):
                continue
            if not (lo - tol <= y <= hi + tol):
                return False
        return True

    def to_dict(self) -> dict:
        d = {"label": self.label, "x": _clean(self.x), "y": _clean(self.y), "style": dict(self.style)}
        for name in ("band_lo", "band_hi", "whisker_lo", "whisker_hi"):
            arr = getattr(self, name)
            if arr is not None:
                d[name] = _clean(arr)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Series":
        return cls(
            d["label"],
            _unclean(d["x"]),
            _unclean(d["y"]),
            _unclean(d.get("band_lo")),
            _unclean(d.get("band_hi")),
            _unclean(d.get("whisker_lo")),
            _unclean(d.get("whisker_hi")),
            dict(d.get("style", {})),
        )


@dataclass
class MatrixPayload:
    cells: list[list[float]]
    row_labels: list[str]
    col_labels: list[str]
    title: str = ""
    cells_lo: list[list[float]] | None = None
    cells_hi: list[list[float]] | None = None

    def __post_init__(self):
        if not self.cells or any(len(r) != len(self.cells[0]) for r in self.cells):
            raise DeliverableError("heatmap matrix must be non-empty and rectangular")
        if len(self.row_labels) != self.rows or len(self.col_labels) != self.cols:
            raise DeliverableError(
                f"heatmap labels ({len(self.row_labels)}x{len(self.col_labels)}) do not match "
                f"matrix shape ({self.rows}x{self.cols})"
            )

    @property
    def rows(self) -> int:
        return len(self.cells)

    @property
    def cols(self) -> int:
        return len(self.cells[0])

    def array(self, which: str = "cells") -> np.ndarray:
        return np.array(_unclean_matrix(getattr(self, which)), dtype=float)

    def to_dict(self) -> dict:
        d = {
            "rows": self.rows,
            "cols": self.cols,
            "title": self.title,
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "cells": [_clean(r) for r in self.cells],
        }
        if self.cells_lo is not None:
            d["cells_lo"] = [_clean(r) for r in self.cells_lo]
            d["cells_hi"] = [_clean(r) for r in self.cells_hi]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MatrixPayload":
        return cls(
            _unclean_matrix(d["cells"]),
            list(d["row_labels"]),
            list(d["col_labels"]),
            d.get("title", ""),
            _unclean_matrix(d.get("cells_lo")),
            _unclean_matrix(d.get("cells_hi")),
        )


def _unclean_matrix(m):
    return None if m is None else [_unclean(r) for r in m]


@dataclass
class Axis:
    label: str = ""
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise DeliverableError(f"unknown axis scale {self.scale!r}; choose from {SCALES}")


@dataclass
class PlotDocument:
    kind: str  # linegraph | heatmap | panels
    title: str = ""
    x_axis: Axis = field(default_factory=Axis)
    y_axis: Axis = field(default_factory=Axis)
    series: list[Series] = field(default_factory=list)
    matrices: list[MatrixPayload] = field(default_factory=list)
    scope: str = "inter_exp"
    dist_stats: str | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "title": self.title,
            "scope": self.scope,
            "dist_stats": self.dist_stats,
            "axes": {"x": asdict(self.x_axis), "y": asdict(self.y_axis)},
            "series": [s.to_dict() for s in self.series],
            "matrices": [m.to_dict() for m in self.matrices],
            "provenance": dict(self.provenance),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PlotDocument":
        axes = d.get("axes", {})
        return cls(
            kind=d["kind"],
            title=d.get("title", ""),
            x_axis=Axis(**axes.get("x", {})),
            y_axis=Axis(**axes.get("y", {})),
            series=[Series.from_dict(s) for s in d.get("series", [])],
            matrices=[MatrixPayload.from_dict(m) for m in d.get("matrices", [])],
            scope=d.get("scope", "inter_exp"),
            dist_stats=d.get("dist_stats"),
            provenance=dict(d.get("provenance", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "PlotDocument":
        return cls.from_dict(json.loads(text))

    def bands_ok(self) -> bool:
        return all(s.check_bands() for s in self.series)


# --- generators -----------------------------------------------------------------


def band_series(label: str, x: Sequence, stats: dict, dist_stats: str, index=slice(None)) -> Series:
    """Series with uncertainty bands taken from ``stats`` (stat id -> array).

    conf95: line = mean, band = [ciL95, ciH95].
    bw: line = median, band = [q1, q3], whiskers = [min, max].
    """
    def pick(s):
        return [float(v) for v in np.asarray(stats[s])[index]]

    if dist_stats == "bw":
        return Series(label, list(x), pick("median"), pick("q1"), pick("q3"), pick("min"), pick("max"))
    if dist_stats in ("conf95", "all"):
        return Series(label, list(x), pick("mean"), pick("ciL95"), pick("ciH95"))
    if dist_stats is None:
        return Series(label, list(x), pick("mean"))
    raise DeliverableError(f"unknown dist-stats {dist_stats!r}")


def axis_x_values(axis) -> tuple[list, str]:
    """x positions for an axis: numeric values where possible, else labels."""
    values = list(axis.values)
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return [float(v) for v in values], ("log2" if axis.spacing == "geometric" else "linear")
    return list(axis.labels), "linear"


def gen_inter_linegraph(summary: SummaryTable, target, manifest, dist_stats: str = "conf95",
                        provenance: dict | None = None) -> PlotDocument:
    if manifest.arity != "univariate":
        raise DeliverableError(
            f"target {target.id!r}: inter-experiment linegraphs need a univariate batch; use kind: heatmap"
        )
    axis = manifest.axes[0]
    x, scale = axis_x_values(axis)
    scale = target.style.get("xscale", scale)
    series = band_series(target.label or target.column, x, summary.stats, dist_stats)
    return PlotDocument(
        kind="linegraph",
        title=target.title,
        x_axis=Axis(target.xlabel or axis.token, scale),
        y_axis=Axis(target.ylabel or f"{summary.column} ({summary.reducer})", target.style.get("yscale", "linear")),
        series=[series],
        scope="inter_exp",
        dist_stats=dist_stats,
        provenance=provenance or {},
    )


def gen_intra_linegraph(bundle: StatsBundle, target, index_column: str | None, dist_stats: str = "conf95",
                        provenance: dict | None = None) -> PlotDocument:
    cols = bundle.columns
    if target.column not in cols:
        raise DeliverableError(f"target {target.id!r}: no column {target.column!r}; available: {cols}")
    c = cols.index(target.column)
    if index_column in cols:
        x = [float(v) for v in bundle.stats["mean"][:, cols.index(index_column)]]
    else:
        x = [float(k) for k in range(bundle.stats["mean"].shape[0])]
    series = band_series(target.label or target.column, x, bundle.stats, dist_stats, (slice(None), c))
    return PlotDocument(
        kind="linegraph",
        title=target.title,
        x_axis=Axis(target.xlabel or (index_column or "row"), target.style.get("xscale", "linear")),
        y_axis=Axis(target.ylabel or target.column, target.style.get("yscale", "linear")),
        series=[series],
        scope="intra_exp",
        dist_stats=dist_stats,
        provenance=provenance or {},
    )


def gen_heatmap(matrix, target, row_labels=None, col_labels=None, lo=None, hi=None, scope="inter_exp",
                xlabel="", ylabel="", provenance: dict | None = None) -> PlotDocument:
    """Heatmap document; rows are the first axis (or spatial y), columns the second."""
    arr = matrix if isinstance(matrix, list) else np.asarray(matrix, dtype=float).tolist()
    if not arr or any(len(r) != len(arr[0]) for r in arr):
        raise DeliverableError(f"target {target.id!r}: matrix is not rectangular")
    rows, cols = len(arr), len(arr[0])
    payload = MatrixPayload(
        [[float(v) for v in r] for r in arr],
        list(row_labels) if row_labels is not None else [str(i) for i in range(rows)],
        list(col_labels) if col_labels is not None else [str(j) for j in range(cols)],
        target.title,
        None if lo is None else np.asarray(lo, dtype=float).tolist(),
        None if hi is None else np.asarray(hi, dtype=float).tolist(),
    )
    return PlotDocument(
        kind="heatmap",
        title=target.title,
        x_axis=Axis(target.xlabel or xlabel),
        y_axis=Axis(target.ylabel or ylabel),
        matrices=[payload],
        scope=scope,
        provenance=provenance or {},
    )


def gen_summary_heatmap(summary: SummaryTable, target, manifest, dist_stats: str = "conf95",
                        provenance: dict | None = None) -> PlotDocument:
    if manifest.arity != "bivariate":
        raise DeliverableError(f"target {target.id!r}: summary heatmaps need a bivariate batch")
    a, b = manifest.axes
    lo_id, hi_id = ("q1", "q3") if dist_stats == "bw" else ("ciL95", "ciH95")
    center = "median" if dist_stats == "bw" else "mean"
    doc = gen_heatmap(
        summary.matrix(center), target, a.labels, b.labels, summary.matrix(lo_id), summary.matrix(hi_id),
        "inter_exp", xlabel=b.token, ylabel=a.token, provenance=provenance,
    )
    doc.dist_stats = dist_stats
    return doc
