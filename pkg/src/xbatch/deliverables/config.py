"""Graph configuration (``<project>/config/graphs.yaml``).

::

    targets:
      - id: collected-vs-size
        kind: linegraph          # linegraph | heatmap | video
        scope: inter_exp         # inter_exp | intra_exp
        stem: collected
        column: collected
        title: Objects collected
        xlabel: Swarm size
        ylabel: Objects
        style: {xscale: log2}
        models: [{id: model.constant, params: {value: 10}}]
    video:
      template: "ffmpeg -y -framerate {framerate} -pattern_type glob -i '{input_glob}' {opts} {output}"
      framerate: 10
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError

log = logging.getLogger(__name__)

KINDS = ("linegraph", "heatmap", "video")
SCOPES = ("intra_exp", "inter_exp")
TOP_LEVEL_KEYS = {"targets", "video"}


@dataclass(frozen=True)
class ModelRef:
    id: str
    params: dict = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class GraphTarget:
    id: str
    kind: str
    stem: str
    scope: str = "inter_exp"
    column: str | None = None
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    label: str = ""
    snapshot: int = -1
    style: dict = field(default_factory=dict, hash=False)
    models: tuple[ModelRef, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"graph target {self.id!r}: invalid kind {self.kind!r}; choose from {KINDS}")
        if self.scope not in SCOPES:
            raise ConfigError(f"graph target {self.id!r}: invalid scope {self.scope!r}; choose from {SCOPES}")
        if self.kind == "video" and self.scope != "intra_exp":
            raise ConfigError(f"graph target {self.id!r}: videos are built from intra_exp snapshot frames")
        if self.kind == "linegraph" and not self.column:
            raise ConfigError(f"graph target {self.id!r}: linegraphs need a column")
        if self.kind == "heatmap" and self.scope == "inter_exp" and not self.column:
            raise ConfigError(f"graph target {self.id!r}: summary heatmaps need a column")


@dataclass
class GraphConfig:
    targets: list[GraphTarget] = field(default_factory=list)
    video: dict = field(default_factory=dict)


def _target(raw: dict, pos: int) -> GraphTarget:
    if not isinstance(raw, dict) or "id" not in raw:
        raise ConfigError(f"graph target #{pos}: must be a mapping with an 'id'")
    tid = str(raw["id"])
    known = set(GraphTarget.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"graph target {tid!r}: unknown keys {sorted(unknown)}")
    if "kind" not in raw or "stem" not in raw:
        raise ConfigError(f"graph target {tid!r}: 'kind' and 'stem' are required")
    models = tuple(
        ModelRef(str(m["id"]), dict(m.get("params") or {})) if isinstance(m, dict) else ModelRef(str(m))
        for m in raw.get("models") or ()
    )
    kw = {k: v for k, v in raw.items() if k != "models"}
    kw["id"] = tid
    kw["style"] = dict(raw.get("style") or {})
    return GraphTarget(models=models, **kw)


def parse_graph_config(data) -> GraphConfig:
    if data is None:
        return GraphConfig()
    if not isinstance(data, dict):
        raise ConfigError("graphs.yaml must be a mapping with a 'targets' list")
    for key in sorted(set(data) - TOP_LEVEL_KEYS):
        log.warning("graphs.yaml: ignoring unknown top-level key %r", key)
    targets = [_target(t, k) for k, t in enumerate(data.get("targets") or [])]
    seen = set()
    for t in targets:
        if t.id in seen:
            raise ConfigError(f"graph target {t.id!r}: duplicate id")
        seen.add(t.id)
    return GraphConfig(targets, dict(data.get("video") or {}))


def load_graph_config(path: str | Path) -> GraphConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read graph config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_graph_config(data)
