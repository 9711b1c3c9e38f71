"""Project configuration: ``<project>/config/project.yaml`` and ``graphs.yaml``.

``project.yaml`` keys (all optional)::

    criteria:        # parser overrides/additions, see criteria.make_parser
      vel: {kind: scalar_range, path: /refsim/agents, attr: velocity}
    controllers:     # --controller NAME -> changes
      alpha: [{op: set_attr, path: /refsim/agents, name: velocity, value: "1.0"}]
    robots: {...}    # --robot NAME -> changes
    scenarios: {...} # --scenario NAME -> changes
    extra_changes:
      all: [...]                 # applied to every experiment
      per_experiment: {3: [...]} # applied to one experiment index

The project directory is found as a ``type: project`` plugin with a matching
id on the plugin path, else as ``./<project>``.  A missing directory means an
empty configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import plugins
from .errors import ConfigError
from .xmlops import AttributeChangeSet


@dataclass
class ProjectConfig:
    name: str
    root: Path | None = None
    criteria: dict = field(default_factory=dict)
    controllers: dict[str, AttributeChangeSet] = field(default_factory=dict)
    robots: dict[str, AttributeChangeSet] = field(default_factory=dict)
    scenarios: dict[str, AttributeChangeSet] = field(default_factory=dict)
    batch_changes: AttributeChangeSet = field(default_factory=AttributeChangeSet)
    per_experiment: dict[int, AttributeChangeSet] = field(default_factory=dict)

    @property
    def graphs_path(self) -> Path | None:
        return self.root / "config" / "graphs.yaml" if self.root else None

    def lookup(self, table: str, key: str | None) -> AttributeChangeSet:
        """Changes for a ``--controller``/``--robot``/``--scenario`` value.

        Free-form names are allowed when the project defines no table for them.
        """
        if key is None:
            return AttributeChangeSet()
        mapping = getattr(self, table)
        if not mapping:
            return AttributeChangeSet()
        if key not in mapping:
            raise ConfigError(f"project {self.name!r}: unknown {table[:-1]} {key!r}; known: {sorted(mapping)}")
        return mapping[key]


def find_project_dir(name: str, search: list[Path] | None = None) -> Path | None:
    m = plugins.find("project", name, search)
    if m is not None:
        return m.root
    local = Path(name)
    return local if local.is_dir() else None


def _changes_table(raw, what: str) -> dict[str, AttributeChangeSet]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"project.yaml: {what} must be a mapping")
    return {str(k): AttributeChangeSet.from_list(v) for k, v in raw.items()}


def load_project(name: str, search: list[Path] | None = None, root: Path | None = None) -> ProjectConfig:
    root = root or find_project_dir(name, search)
    if root is None:
        return ProjectConfig(name)
    path = root / "config" / "project.yaml"
    data = {}
    if path.is_file():
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    extra = data.get("extra_changes") or {}
    return ProjectConfig(
        name=name,
        root=root,
        criteria=data.get("criteria") or {},
        controllers=_changes_table(data.get("controllers"), "controllers"),
        robots=_changes_table(data.get("robots"), "robots"),
        scenarios=_changes_table(data.get("scenarios"), "scenarios"),
        batch_changes=AttributeChangeSet.from_list(extra.get("all")),
        per_experiment={int(k): AttributeChangeSet.from_list(v) for k, v in (extra.get("per_experiment") or {}).items()},
    )
