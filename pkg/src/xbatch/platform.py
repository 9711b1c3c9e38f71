"""Platform plugin contract.

A platform is described by a declarative manifest (``plugin.yaml`` with
``type: platform``)::

    type: platform
    id: platform.mysim
    launch: "mysim --input {input} --seed {seed} --out {output}"
    seed: {path: /mysim/seed, attr: value}
    time: {path: /mysim/time, ticks_attr: ticks}     # optional: duration_attr, hz_attr
    default_hz: 10
    outputs: {tables: [collected], snapshots: [spatial], index_column: t}
    vc_hooks: [{op: add_elem, path: /mysim, name: capture}]

``{input}`` and ``{seed}`` must each appear exactly once in ``launch``;
``{output}`` (the run's output directory) is optional.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import plugins
from .errors import ConfigError, XmlError
from .xmlops import AttributeChangeSet, Change


@dataclass(frozen=True)
class PlatformPlugin:
    id: str
    launch_template: str
    seed_path: str
    seed_attr: str
    time_path: str
    ticks_attr: str
    default_hz: int
    tables: tuple[str, ...]
    snapshots: tuple[str, ...] = ()
    index_column: str | None = None
    duration_attr: str | None = None
    hz_attr: str | None = None
    vc_hooks: AttributeChangeSet = field(default_factory=AttributeChangeSet)
    root: Path | None = None

    def __post_init__(self):
        for ph in ("{input}", "{seed}"):
            n = self.launch_template.count(ph)
            if n != 1:
                raise ConfigError(f"platform {self.id}: launch template must contain {ph} exactly once (found {n})")
        if not self.tables and not self.snapshots:
            raise ConfigError(f"platform {self.id}: no output stems declared")
        if int(self.default_hz) < 1:
            raise ConfigError(f"platform {self.id}: default_hz must be >= 1")

    def launch_command(self, input_file: str, seed: int, output_dir: str) -> str:
        return (
            self.launch_template.replace("{input}", input_file)
            .replace("{seed}", str(seed))
            .replace("{output}", output_dir)
        )

    def setup_changes(self, duration_s: int, hz: int | None) -> AttributeChangeSet:
        hz = hz or self.default_hz
        changes = [Change("set_attr", self.time_path, self.ticks_attr, str(duration_s * hz))]
        if self.duration_attr:
            changes.append(Change("set_attr", self.time_path, self.duration_attr, str(duration_s)))
        if self.hz_attr:
            changes.append(Change("set_attr", self.time_path, self.hz_attr, str(hz)))
        return AttributeChangeSet.of(changes)

    def seed_change(self, seed: int) -> AttributeChangeSet:
        return AttributeChangeSet.of([Change("set_attr", self.seed_path, self.seed_attr, str(seed))])

    @classmethod
    def from_manifest(cls, data: dict, root: Path | None = None) -> "PlatformPlugin":
        pid = data.get("id", "?")
        try:
            seed, time, outputs = data["seed"], data["time"], data.get("outputs", {})
            return cls(
                id=pid,
                launch_template=str(data["launch"]),
                seed_path=seed["path"],
                seed_attr=seed["attr"],
                time_path=time["path"],
                ticks_attr=time["ticks_attr"],
                duration_attr=time.get("duration_attr"),
                hz_attr=time.get("hz_attr"),
                default_hz=int(data["default_hz"]),
                tables=tuple(outputs.get("tables", ())),
                snapshots=tuple(outputs.get("snapshots", ())),
                index_column=outputs.get("index_column"),
                vc_hooks=AttributeChangeSet.from_list(data.get("vc_hooks")),
                root=root,
            )
        except (KeyError, TypeError, ValueError, XmlError) as exc:
            raise ConfigError(f"platform {pid}: invalid manifest: {exc!r}") from None


REFSIM = PlatformPlugin(
    id="platform.refsim",
    launch_template="refsim --input {input} --seed {seed} --output-dir {output}",
    seed_path="/refsim/seed",
    seed_attr="value",
    time_path="/refsim/time",
    ticks_attr="ticks",
    default_hz=10,
    tables=("collected",),
    snapshots=("spatial",),
    index_column="t",
    vc_hooks=AttributeChangeSet.of([Change("add_elem", "/refsim", "capture")]),
)

BUILTINS = {REFSIM.id: REFSIM}


def resolve_platform(pid: str, search: list[Path] | None = None) -> PlatformPlugin:
    """Built-ins first, then the plugin path; manifests are never executed."""
    if pid in BUILTINS:
        return BUILTINS[pid]
    search = plugins.plugin_path() if search is None else search
    manifest = plugins.find("platform", pid, search)
    if manifest is None:
        where = ", ".join(str(p) for p in search) or "<empty>"
        raise ConfigError(f"platform {pid!r} not found; built-ins: {sorted(BUILTINS)}; plugin path: {where}")
    return PlatformPlugin.from_manifest(manifest.data, manifest.root)
