"""Plugin discovery on ``XBATCH_PLUGIN_PATH``.

Each path entry is either a plugin directory itself (it holds ``plugin.yaml``)
or a directory whose immediate subdirectories are plugins.  Manifests are read,
never executed, so discovery is safe under ``--exec-dry-run``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

ENV_VAR = "XBATCH_PLUGIN_PATH"
PLUGIN_TYPES = ("criteria", "platform", "model", "storage", "project")


@dataclass(frozen=True)
class PluginManifest:
    type: str
    id: str
    root: Path
    data: dict


def plugin_path(env: dict | None = None) -> list[Path]:
    raw = (env if env is not None else os.environ).get(ENV_VAR, "")
    return [Path(p) for p in raw.split(os.pathsep) if p]


def read_manifest(plugin_dir: Path) -> PluginManifest:
    mpath = plugin_dir / "plugin.yaml"
    try:
        data = yaml.safe_load(mpath.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{mpath}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{mpath}: manifest must be a mapping")
    ptype, pid = data.get("type"), data.get("id")
    if ptype not in PLUGIN_TYPES:
        raise ConfigError(f"{mpath}: 'type' must be one of {PLUGIN_TYPES}, got {ptype!r}")
    if not isinstance(pid, str) or not pid:
        raise ConfigError(f"{mpath}: missing 'id'")
    return PluginManifest(ptype, pid, plugin_dir, data)


def _candidate_dirs(entry: Path):
    if (entry / "plugin.yaml").is_file():
        yield entry
        return
    if entry.is_dir():
        for sub in sorted(entry.iterdir()):
            if (sub / "plugin.yaml").is_file():
                yield sub


def discover(ptype: str, search: list[Path] | None = None) -> list[PluginManifest]:
    """All plugins of ``ptype``, in search order (first match wins on id clashes)."""
    search = plugin_path() if search is None else search
    seen: set[str] = set()
    found = []
    for entry in search:
        for d in _candidate_dirs(entry):
            m = read_manifest(d)
            if m.type == ptype and m.id not in seen:
                seen.add(m.id)
                found.append(m)
    return found


def find(ptype: str, pid: str, search: list[Path] | None = None) -> PluginManifest | None:
    for m in discover(ptype, search):
        if m.id == pid:
            return m
    return None
