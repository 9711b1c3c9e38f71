"""Stage 4 driver: statistics + graph config -> plot documents, SVGs, video commands."""

from __future__ import annotations

import hashlib
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import DeliverableError
from ..generation import BatchLayout, BatchManifest, atomic_write
from ..stats import StatsBundle, SummaryTable, read_frames, summary_path
from ..storage import CSV, DataTable
from .config import GraphConfig, GraphTarget
from .document import PlotDocument, gen_heatmap, gen_inter_linegraph, gen_intra_linegraph, gen_summary_heatmap
from .models import overlay_models, resolve_model
from .svg import render_plot
from .video import DEFAULT_FRAMERATE, DEFAULT_TEMPLATE, emit_video_cmd, run_video_cmd

log = logging.getLogger(__name__)

NEEDED = {
    "conf95": ("mean", "ciL95", "ciH95"),
    "all": ("mean", "ciL95", "ciH95"),
    "bw": ("mean", "median", "q1", "q3", "min", "max"),
}


def provenance(layout: BatchLayout, manifest: BatchManifest) -> dict:
    """Stable across regenerations: the timestamp is the batch's creation time
    unless SOURCE_DATE_EPOCH overrides it."""
    digest = hashlib.sha256(layout.manifest_path.read_bytes()).hexdigest()
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc).isoformat() if epoch else manifest.created
    return {"manifest_sha256": digest, "criteria": list(manifest.criteria), "generated": when}


def write_if_changed(path: Path, text: str) -> bool:
    if path.is_file() and path.read_text() == text:
        return False
    atomic_write(path, text)
    return True


def write_doc(base: Path, doc: PlotDocument) -> list[Path]:
    if not doc.bands_ok():
        raise DeliverableError(f"{base}: band does not contain its line")
    # ids may contain dots (exp0.visits, <id>.row2): append, never replace
    jpath, spath = base.parent / f"{base.name}.json", base.parent / f"{base.name}.svg"
    write_if_changed(jpath, doc.to_json())
    write_if_changed(spath, render_plot(doc))
    return [jpath, spath]


def load_bundle(layout: BatchLayout, i: int, stem: str, dist_stats: str) -> StatsBundle:
    stats, columns = {}, None
    for stat in NEEDED[dist_stats]:
        path = layout.exp_stats(i) / f"{stem}.{stat}.csv"
        if not path.is_file():
            raise DeliverableError(
                f"missing {path}; re-run stage 3 with --dist-stats {dist_stats} (or all)"
            )
        t = CSV.read(path)
        stats[stat] = t.rows
        columns = t.columns
    return StatsBundle(columns, stats, 0)


def _with_models(doc: PlotDocument, target: GraphTarget, search) -> PlotDocument:
    if not target.models:
        return doc
    return overlay_models(doc, [(resolve_model(m.id, search), m.params) for m in target.models])


def _save_model_tables(layout: BatchLayout, doc: PlotDocument, name: str) -> None:
    for s in doc.series[1:]:
        if s.style.get("model"):
            t = DataTable(s.label, ["y"], np.array(s.y, dtype=float).reshape(-1, 1))
            write_if_changed(layout.models / f"{name}.{s.label}.csv", CSV.dumps(t))


def generate_deliverables(
    layout: BatchLayout,
    manifest: BatchManifest,
    config: GraphConfig,
    exp_range,
    dist_stats: str = "conf95",
    platform_vc: bool = False,
    render_cmd_opts: str = "",
    render_exec: bool = False,
    index_column: str | None = None,
    reducer: str = "final",
    search=None,
) -> list[Path]:
    """Build every target in ``config``; returns the paths produced."""
    written: list[Path] = []
    prov = provenance(layout, manifest)
    for target in config.targets:
        if target.scope == "inter_exp":
            # one graphs.yaml serves uni- and bivariate batches alike
            wanted = "univariate" if target.kind == "linegraph" else "bivariate"
            if manifest.arity != wanted:
                log.info("target %s: skipped (%s %s needs a %s batch)", target.id, target.scope, target.kind, wanted)
                continue
            spath = summary_path(layout, target.stem, target.column)
            if not spath.is_file():
                raise DeliverableError(f"target {target.id!r}: missing {spath}; run stage 3 first")
            summary = SummaryTable.from_csv(spath, target.stem, target.column, reducer)
            if target.kind == "linegraph":
                doc = _with_models(gen_inter_linegraph(summary, target, manifest, dist_stats, prov), target, search)
                _save_model_tables(layout, doc, target.id)
            else:
                doc = gen_summary_heatmap(summary, target, manifest, dist_stats, prov)
            written += write_doc(layout.graphs / "collated" / target.id, doc)
            continue

        for i in exp_range:
            out = layout.graphs / f"exp{i}" / target.id
            if target.kind == "linegraph":
                bundle = load_bundle(layout, i, target.stem, dist_stats)
                doc = gen_intra_linegraph(bundle, target, index_column, dist_stats, prov)
                doc = _with_models(doc, target, search)
                _save_model_tables(layout, doc, f"exp{i}.{target.id}")
                written += write_doc(out, doc)
            elif target.kind == "heatmap":
                frames = read_frames(layout, i, target.stem)
                if not frames:
                    raise DeliverableError(f"target {target.id!r}: exp{i} has no {target.stem} frames")
                try:
                    frame = frames[target.snapshot]
                except IndexError:
                    raise DeliverableError(
                        f"target {target.id!r}: snapshot {target.snapshot} out of range ({len(frames)} frames)"
                    ) from None
                doc = gen_heatmap(frame, target, scope="intra_exp", xlabel="x", ylabel="y", provenance=prov)
                written += write_doc(out, doc)
            elif target.kind == "video":
                if not platform_vc:
                    log.info("target %s: skipped (needs --platform-vc)", target.id)
                    continue
                written += render_video(layout, i, target, config.video, render_cmd_opts, render_exec)
    return written


def render_video(layout: BatchLayout, i: int, target: GraphTarget, video_cfg: dict, opts: str, execute: bool) -> list[Path]:
    frames = read_frames(layout, i, target.stem)
    if not frames:
        raise DeliverableError(f"target {target.id!r}: exp{i} has no {target.stem} frames")
    frame_dir = layout.videos / f"exp{i}" / target.stem
    paths = []
    for k, f in enumerate(frames):
        doc = gen_heatmap(f, target, scope="intra_exp", xlabel="x", ylabel="y")
        p = frame_dir / f"frame_{k:04d}.svg"
        write_if_changed(p, render_plot(doc))
        paths.append(p)
    cmd = emit_video_cmd(
        frame_dir,
        opts,
        template=video_cfg.get("template", DEFAULT_TEMPLATE),
        framerate=int(video_cfg.get("framerate", DEFAULT_FRAMERATE)),
        output=frame_dir.parent / f"{frame_dir.name}.mp4",
    )
    cmd_path = layout.videos / f"exp{i}" / f"{target.stem}.cmd"
    write_if_changed(cmd_path, cmd + "\n")
    paths.append(cmd_path)
    if execute:
        run_video_cmd(cmd)
    return paths
