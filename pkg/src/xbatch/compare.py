"""Stage 5: replot deliverables from several batch roots on one figure.

Sources are the stage-4 plot documents of each batch, located by graph id:
``<id>`` names ``graphs/collated/<id>.json`` and ``exp<i>/<id>`` names
``graphs/exp<i>/<id>.json``. Nothing under a source root is written.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deliverables.document import Axis, MatrixPayload, PlotDocument, Series
from .deliverables.models import ModelPlugin, overlay_models
from .errors import CompareError, DeliverableError
from .generation import BatchLayout, BatchManifest

log = logging.getLogger(__name__)

MODES = {"intra": "intra_scenario", "inter": "inter_scenario", "intra_scenario": "intra_scenario",
         "inter_scenario": "inter_scenario"}
COMPARED_FIELDS = ("project", "criteria", "scenario", "controller", "platform", "exp_setup", "n_runs")


@dataclass(frozen=True)
class ComparisonSpec:
    mode: str
    roots: tuple[Path, ...]
    target: str
    output_id: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise CompareError(f"unknown compare mode {self.mode!r}; choose intra or inter")
        object.__setattr__(self, "mode", MODES[self.mode])
        object.__setattr__(self, "roots", tuple(Path(r) for r in self.roots))
        if len(self.roots) < 2:
            raise CompareError("comparison needs at least 2 batch roots")
        if not self.output_id:
            object.__setattr__(self, "output_id", self.target.replace("/", "."))


@dataclass
class Diagnosis:
    matching: list[str]
    differing: dict[str, list]
    verdicts: dict[str, bool]
    reasons: dict[str, str] = field(default_factory=dict)
    warnings: dict[str, list[str]] = field(default_factory=dict)

    def ok(self, mode: str) -> bool:
        return self.verdicts[MODES[mode]]


def _value(m: BatchManifest, name: str):
    v = getattr(m, name)
    return list(v) if isinstance(v, (list, tuple)) else v


def validate_comparability(manifests: list[BatchManifest]) -> Diagnosis:
    """Field-by-field report plus a verdict for each comparison mode."""
    matching, differing = [], {}
    for name in COMPARED_FIELDS:
        vals = [_value(m, name) for m in manifests]
        if all(v == vals[0] for v in vals):
            matching.append(name)
        else:
            differing[name] = vals
    verdicts, reasons = {}, {}
    warnings = {"intra_scenario": [], "inter_scenario": []}

    bad = [f for f in ("criteria", "scenario") if f in differing]
    verdicts["intra_scenario"] = not bad
    if bad:
        reasons["intra_scenario"] = "; ".join(f"{f} differs: {differing[f]}" for f in bad)
    if "controller" not in differing:
        warnings["intra_scenario"].append("all batches use the same controller")

    verdicts["inter_scenario"] = "controller" not in differing
    if "controller" in differing:
        reasons["inter_scenario"] = f"controller differs: {differing['controller']}"
    if "scenario" not in differing:
        warnings["inter_scenario"].append("all batches use the same scenario")
    return Diagnosis(matching, differing, verdicts, reasons, warnings)


def target_path(root: Path, target: str) -> Path:
    layout = BatchLayout(Path(root))
    if "/" in target:
        exp, gid = target.split("/", 1)
        return layout.graphs / exp / f"{gid}.json"
    return layout.graphs / "collated" / f"{target}.json"


def _load_sources(spec: ComparisonSpec) -> tuple[list[BatchManifest], list[PlotDocument], list[str]]:
    manifests, docs, digests = [], [], []
    for root in spec.roots:
        layout = BatchLayout(root)
        if not layout.manifest_path.is_file():
            raise CompareError(f"{root}: not a batch root (no manifest.yaml)")
        raw = layout.manifest_path.read_bytes()
        manifests.append(BatchManifest.from_yaml(raw.decode()))
        digests.append(hashlib.sha256(raw).hexdigest())
        p = target_path(root, spec.target)
        if not p.is_file():
            raise CompareError(f"{root}: no deliverable {spec.target!r} ({p} missing; run stage 4 first)")
        docs.append(PlotDocument.from_json(p.read_text()))
    kinds = {d.kind for d in docs}
    if len(kinds) != 1:
        raise CompareError(f"target {spec.target!r} has different kinds across batches: {sorted(kinds)}")
    return manifests, docs, digests


def _labels(spec: ComparisonSpec, manifests: list[BatchManifest]) -> list[str]:
    key = "controller" if spec.mode == "intra_scenario" else "scenario"
    raw = [str(getattr(m, key) or "default") for m in manifests]
    out = []
    for k, lab in enumerate(raw):
        out.append(f"{lab} ({k})" if raw.count(lab) > 1 else lab)
    return out


def _check(spec: ComparisonSpec, manifests: list[BatchManifest]) -> None:
    diag = validate_comparability(manifests)
    if not diag.verdicts[spec.mode]:
        raise CompareError(f"batches are not comparable ({spec.mode}): {diag.reasons[spec.mode]}")
    for w in diag.warnings[spec.mode]:
        log.warning("compare: %s", w)


def _provenance(spec: ComparisonSpec, digests: list[str]) -> dict:
    return {
        "mode": spec.mode,
        "target": spec.target,
        "sources": [{"root": str(r), "manifest_sha256": d} for r, d in zip(spec.roots, digests)],
    }


def compare(spec: ComparisonSpec, models: list[tuple[ModelPlugin, dict]] | None = None,
            difference: bool = True) -> PlotDocument:
    """Merge one deliverable from every batch root into a single document.

    Linegraphs: one series per batch in root order (plus model overlays).
    Heatmaps: one panel per batch, plus an A-B panel when exactly two batches
    are compared and ``difference`` is set.
    """
    manifests, docs, digests = _load_sources(spec)
    _check(spec, manifests)
    labels = _labels(spec, manifests)
    first = docs[0]
    out = PlotDocument(
        kind=first.kind,
        title=first.title,
        x_axis=copy.deepcopy(first.x_axis),
        y_axis=copy.deepcopy(first.y_axis),
        scope=first.scope,
        dist_stats=first.dist_stats,
        provenance=_provenance(spec, digests),
    )
    if first.kind == "linegraph":
        for lab, doc in zip(labels, docs):
            if not doc.series:
                raise CompareError(f"target {spec.target!r} has no series")
            s = copy.deepcopy(doc.series[0])
            s.label = lab
            out.series.append(s)
        if models:
            try:
                out = overlay_models(out, models)
            except DeliverableError as exc:
                raise CompareError(str(exc)) from None
        return out

    if models:
        raise CompareError("model overlays apply to linegraph comparisons only")
    shapes = {(d.matrices[0].rows, d.matrices[0].cols) for d in docs}
    for lab, doc in zip(labels, docs):
        m = copy.deepcopy(doc.matrices[0])
        m.title = lab
        out.matrices.append(m)
    if difference and len(docs) == 2 and len(shapes) == 1:
        a, b = (d.matrices[0].array() for d in docs)
        m0 = docs[0].matrices[0]
        out.matrices.append(
            MatrixPayload((a - b).tolist(), list(m0.row_labels), list(m0.col_labels), f"{labels[0]} - {labels[1]}")
        )
    out.kind = "heatmap"
    return out


def compare_as_lines(spec: ComparisonSpec, axis: str) -> list[PlotDocument]:
    """One linegraph per heatmap row (``axis='row'``) or column (``'col'``).

    Each linegraph holds one series per batch; bands come from the
    heatmap's lower/upper cell bounds when the source recorded them.
    """
    if axis not in ("row", "col"):
        raise CompareError(f"--as-lines must be row or col, not {axis!r}")
    manifests, docs, digests = _load_sources(spec)
    _check(spec, manifests)
    if docs[0].kind != "heatmap":
        raise CompareError(f"--as-lines needs heatmap sources; {spec.target!r} is a {docs[0].kind}")
    mats = [d.matrices[0] for d in docs]
    shape = (mats[0].rows, mats[0].cols)
    for root, m in zip(spec.roots, mats):
        if (m.rows, m.cols) != shape:
            raise CompareError(f"{root}: heatmap shape {(m.rows, m.cols)} differs from {shape}")
    labels = _labels(spec, manifests)
    m0 = mats[0]
    if axis == "row":
        n_lines, x, fixed_labels = m0.rows, list(m0.col_labels), m0.row_labels
        xlabel, fixed_name = docs[0].x_axis.label, docs[0].y_axis.label
    else:
        n_lines, x, fixed_labels = m0.cols, list(m0.row_labels), m0.col_labels
        xlabel, fixed_name = docs[0].y_axis.label, docs[0].x_axis.label

    def line(arr: np.ndarray, k: int) -> list[float]:
        return [float(v) for v in (arr[k, :] if axis == "row" else arr[:, k])]

    out = []
    for k in range(n_lines):
        series = []
        for lab, m in zip(labels, mats):
            lo = line(m.array("cells_lo"), k) if m.cells_lo is not None else None
            hi = line(m.array("cells_hi"), k) if m.cells_hi is not None else None
            series.append(Series(lab, list(x), line(m.array(), k), lo, hi))
        out.append(
            PlotDocument(
                kind="linegraph",
                title=f"{docs[0].title} [{fixed_name}={fixed_labels[k]}]".strip(),
                x_axis=Axis(xlabel),
                y_axis=Axis(docs[0].title or spec.target),
                series=series,
                scope=docs[0].scope,
                dist_stats=docs[0].dist_stats,
                provenance=_provenance(spec, digests),
            )
        )
    return out
