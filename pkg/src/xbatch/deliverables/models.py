"""Model framework: predicted series plotted alongside empirical results.

Built-ins:

* ``model.constant`` -- ``y = params.value`` at every empirical x
* ``model.replay``   -- replays the empirical line (a self-consistency check)

External models are plugins (``type: model``) naming a ``command`` that is
called as ``command <request.json> <response.csv>`` from the plugin directory.
The request holds ``{"x": [...], "y": [...], "params": {...}, "scope": ...}``;
the response is a CSV with columns ``x,y``.
"""

from __future__ import annotations

import copy
import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .. import plugins
from ..errors import ConfigError, DeliverableError
from ..storage import CSV, DataTable
from .document import PlotDocument, Series


@dataclass(frozen=True)
class ModelContext:
    x: list
    y: list[float]
    params: dict
    scope: str


@dataclass(frozen=True)
class ModelPlugin:
    id: str
    scope: str  # intra_exp | inter_exp | any
    evaluate: Callable[[ModelContext], DataTable]


def _constant(ctx: ModelContext) -> DataTable:
    if "value" not in ctx.params:
        raise DeliverableError("model.constant needs params.value")
    v = float(ctx.params["value"])
    return DataTable("model.constant", ["y"], np.full((len(ctx.x), 1), v))


def _replay(ctx: ModelContext) -> DataTable:
    return DataTable("model.replay", ["y"], np.array(ctx.y, dtype=float).reshape(-1, 1))


BUILTINS = {
    "model.constant": ModelPlugin("model.constant", "any", _constant),
    "model.replay": ModelPlugin("model.replay", "any", _replay),
}


def _external(manifest: plugins.PluginManifest) -> ModelPlugin:
    cmd = manifest.data.get("command")
    if not cmd:
        raise ConfigError(f"model plugin {manifest.id!r}: missing 'command'")
    exe = Path(cmd) if Path(cmd).is_absolute() else manifest.root / cmd

    def evaluate(ctx: ModelContext) -> DataTable:
        with tempfile.TemporaryDirectory() as td:
            req, resp = Path(td) / "request.json", Path(td) / "response.csv"
            xs = [x if isinstance(x, str) else float(x) for x in ctx.x]
            req.write_text(json.dumps({"x": xs, "y": list(map(float, ctx.y)), "params": ctx.params, "scope": ctx.scope}))
            proc = subprocess.run([str(exe), str(req), str(resp)], cwd=manifest.root, capture_output=True, text=True)
            if proc.returncode != 0:
                raise DeliverableError(f"model {manifest.id!r} failed: {proc.stderr.strip()}")
            return CSV.read(resp, manifest.id)

    return ModelPlugin(manifest.id, str(manifest.data.get("scope", "any")), evaluate)


def resolve_model(mid: str, search: list[Path] | None = None) -> ModelPlugin:
    if mid in BUILTINS:
        return BUILTINS[mid]
    m = plugins.find("model", mid, search)
    if m is None:
        raise ConfigError(f"model {mid!r} not found; built-ins: {sorted(BUILTINS)}")
    return _external(m)


def overlay_models(doc: PlotDocument, models: list[tuple[ModelPlugin, dict]]) -> PlotDocument:
    """Append one dashed series per model; empirical series are left untouched."""
    if doc.kind != "linegraph":
        raise DeliverableError("models can only be overlaid on linegraphs")
    if not doc.series:
        raise DeliverableError("cannot overlay models on a document without an empirical series")
    base = doc.series[0]
    out = copy.deepcopy(doc)
    for model, params in models:
        if model.scope not in ("any", doc.scope):
            raise DeliverableError(f"model {model.id!r} has scope {model.scope}, document is {doc.scope}")
        table = model.evaluate(ModelContext(list(base.x), list(base.y), dict(params), doc.scope))
        y = table.column("y") if "y" in table.columns else table.rows[:, -1]
        if len(y) != len(base.y):
            raise DeliverableError(f"model {model.id!r} returned {len(y)} points, empirical series has {len(base.y)}")
        out.series.append(Series(model.id, list(base.x), [float(v) for v in y], style={"dash": True, "model": True}))
    return out
