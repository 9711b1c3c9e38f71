"""Stage 1: turn a template plus batch criteria into an on-disk batch.

Batch layout::

    <root>/manifest.yaml
    <root>/seeds.yaml
    <root>/exp-inputs/exp<i>/run<j>/input.xml
    <root>/exp-inputs/exp<i>/commands.txt      (stage 2)
    <root>/exp-outputs/exp<i>/run<j>/...        (stage 2)
    <root>/statistics/  graphs/  videos/  models/
"""

from __future__ import annotations

import os
import re
import secrets
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import yaml

from .criteria import BatchCriteria, criteria_slug, expand_grid, merge_changesets
from .errors import ConfigError, SeedTableError, UsageError
from .platform import PlatformPlugin
from .xmlops import AttributeChangeSet, XmlTree, apply_changeset

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def run_seed(master_seed: int, exp_index: int, run_index: int) -> int:
    """seed(e, r) = splitmix64(master + GOLDEN * (e << 32 | r)) mod 2**64.

    splitmix64 is a bijection and GOLDEN is odd, so distinct (e, r) pairs with
    e, r < 2**32 always get distinct seeds.
    """
    counter = (exp_index << 32) | run_index
    return splitmix64((master_seed + GOLDEN * counter) & MASK64)


# --- small value types -----------------------------------------------------


@dataclass(frozen=True)
class ExpSetup:
    duration_s: int
    controller_hz: int | None = None

    def __post_init__(self):
        if self.duration_s < 1:
            raise UsageError("exp_setup duration must be >= 1 second")
        if self.controller_hz is not None and self.controller_hz < 1:
            raise UsageError("exp_setup controller frequency must be >= 1 Hz")

    @property
    def token(self) -> str:
        return f"exp_setup.T{self.duration_s}" + (f".K{self.controller_hz}" if self.controller_hz else "")


def parse_exp_setup(token: str) -> ExpSetup:
    if not token.startswith("exp_setup."):
        raise UsageError(f"--exp-setup must start with 'exp_setup.', got {token!r}")
    fields: dict[str, int] = {}
    for seg in token.split(".")[1:]:
        m = re.fullmatch(r"([TK])(.*)", seg)
        if not m:
            raise UsageError(f"--exp-setup: unknown segment {seg!r}")
        if not m.group(2).isdigit():
            raise UsageError(f"--exp-setup: {seg!r} needs a non-negative integer after {m.group(1)}")
        if m.group(1) in fields:
            raise UsageError(f"--exp-setup: segment {m.group(1)} given twice")
        fields[m.group(1)] = int(m.group(2))
    if "T" not in fields:
        raise UsageError(f"--exp-setup {token!r}: duration T<seconds> is required")
    return ExpSetup(fields["T"], fields.get("K"))


@dataclass
class SeedTable:
    master_seed: int
    seeds: list[list[int]]  # [exp][run]
    path: Path | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.seeds), (len(self.seeds[0]) if self.seeds else 0)

    def seed(self, exp_index: int, run_index: int) -> int:
        return self.seeds[exp_index][run_index]

    def to_yaml(self) -> str:
        n_exp, n_runs = self.shape
        doc = {"master_seed": self.master_seed, "n_experiments": n_exp, "n_runs": n_runs, "seeds": self.seeds}
        return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=10_000)

    @classmethod
    def from_yaml(cls, text: str, path: Path | None = None) -> "SeedTable":
        doc = yaml.safe_load(text) or {}
        try:
            table = cls(int(doc["master_seed"]), [[int(s) for s in row] for row in doc["seeds"]], path)
        except (KeyError, TypeError, ValueError) as exc:
            raise SeedTableError(f"{path}: malformed seeds file ({exc!r})") from None
        if table.shape != (doc.get("n_experiments"), doc.get("n_runs")):
            raise SeedTableError(f"{path}: declared dimensions disagree with the seed matrix")
        return table


def compute_seeds(master_seed: int, cardinality: int, n_runs: int) -> SeedTable:
    if cardinality < 1 or n_runs < 1:
        raise UsageError("need at least one experiment and one run")
    return SeedTable(master_seed, [[run_seed(master_seed, e, r) for r in range(n_runs)] for e in range(cardinality)])


def assign_seeds(
    master_seed: int | None,
    cardinality: int,
    n_runs: int,
    root: Path | None = None,
    force_regen: bool = False,
    write: bool = True,
) -> SeedTable:
    """Reuse ``<root>/seeds.yaml`` if present, else derive a new table from ``master_seed``.

    A ``None`` master seed draws a fresh one from the OS entropy pool.
    """
    path = Path(root) / "seeds.yaml" if root is not None else None
    if path is not None and path.is_file() and not force_regen:
        table = SeedTable.from_yaml(path.read_text(), path)
        if table.shape != (cardinality, n_runs):
            raise SeedTableError(
                f"{path} holds {table.shape[0]} experiments x {table.shape[1]} runs but the batch needs "
                f"{cardinality} x {n_runs}; pass --force-regen to regenerate seeds"
            )
        if master_seed is not None and master_seed != table.master_seed:
            raise SeedTableError(
                f"{path} was generated from master seed {table.master_seed}, not {master_seed}; "
                "pass --force-regen to regenerate seeds"
            )
        return table
    if master_seed is None:
        master_seed = secrets.randbits(64)
    table = compute_seeds(master_seed, cardinality, n_runs)
    table.path = path
    if write and path is not None:
        atomic_write(path, table.to_yaml())
    return table


# --- manifest & layout ----------------------------------------------------


@dataclass
class AxisInfo:
    token: str
    kind: str
    spacing: str
    labels: list[str]
    values: list

    @classmethod
    def from_def(cls, d) -> "AxisInfo":
        return cls(d.token, d.kind, d.spacing, list(d.labels), [v.value for v in d.values])


@dataclass
class BatchManifest:
    project: str
    criteria: list[str]
    platform: str
    exec_env: str
    n_runs: int
    exp_setup: str
    axes: list[AxisInfo]
    master_seed: int
    controller: str | None = None
    robot: str | None = None
    scenario: str = "default"
    template: str | None = None
    platform_vc: bool = False
    created: str = ""
    flags: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.axes[0].labels), (len(self.axes[1].labels) if len(self.axes) > 1 else 1)

    @property
    def cardinality(self) -> int:
        r, c = self.shape
        return r * c

    @property
    def arity(self) -> str:
        return "bivariate" if len(self.axes) > 1 else "univariate"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BatchManifest":
        d = dict(d)
        d["axes"] = [AxisInfo(**a) for a in d.get("axes", [])]
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"manifest: {exc}") from None

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "BatchManifest":
        return cls.from_dict(yaml.safe_load(text) or {})


def batch_root(sierra_root: Path, project: str, controller: str | None, scenario: str, tokens) -> Path:
    """``<sierra-root>/<project>/<scenario>/<controller>/<criteria-slug>``."""
    return Path(sierra_root) / project / scenario / (controller or "default") / criteria_slug(tokens)


@dataclass(frozen=True)
class BatchLayout:
    root: Path

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.yaml"

    @property
    def seeds_path(self) -> Path:
        return self.root / "seeds.yaml"

    @property
    def inputs(self) -> Path:
        return self.root / "exp-inputs"

    @property
    def outputs(self) -> Path:
        return self.root / "exp-outputs"

    @property
    def statistics(self) -> Path:
        return self.root / "statistics"

    @property
    def graphs(self) -> Path:
        return self.root / "graphs"

    @property
    def videos(self) -> Path:
        return self.root / "videos"

    @property
    def models(self) -> Path:
        return self.root / "models"

    def exp_input(self, i: int) -> Path:
        return self.inputs / f"exp{i}"

    def run_input(self, i: int, j: int) -> Path:
        return self.exp_input(i) / f"run{j}"

    def exp_output(self, i: int) -> Path:
        return self.outputs / f"exp{i}"

    def run_output(self, i: int, j: int) -> Path:
        return self.exp_output(i) / f"run{j}"

    def commands_path(self, i: int) -> Path:
        return self.exp_input(i) / "commands.txt"

    def exec_path(self, i: int) -> Path:
        return self.exp_output(i) / "exec.yaml"

    def exp_stats(self, i: int) -> Path:
        return self.statistics / f"exp{i}"

    def read_manifest(self) -> BatchManifest:
        if not self.manifest_path.is_file():
            raise ConfigError(f"no batch at {self.root} (missing manifest.yaml); run stage 1 first")
        return BatchManifest.from_yaml(self.manifest_path.read_text())

    def read_seeds(self) -> SeedTable:
        return SeedTable.from_yaml(self.seeds_path.read_text(), self.seeds_path)


def atomic_write(path: Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


# --- generation -----------------------------------------------------------


@dataclass
class ExtraChanges:
    """User changes applied after the criteria and platform changes."""

    batch_wide: AttributeChangeSet = field(default_factory=AttributeChangeSet)
    per_experiment: dict[int, AttributeChangeSet] = field(default_factory=dict)

    def for_experiment(self, i: int) -> AttributeChangeSet:
        return self.batch_wide + self.per_experiment.get(i, AttributeChangeSet())


def experiment_trees(
    template: XmlTree,
    criteria: BatchCriteria,
    exp_setup: ExpSetup,
    platform: PlatformPlugin,
    extra: ExtraChanges | None = None,
    platform_vc: bool = False,
) -> list[tuple[AttributeChangeSet, AttributeChangeSet]]:
    """Per experiment: (changes before the seed, changes after the seed)."""
    extra = extra or ExtraChanges()
    setup = platform.setup_changes(exp_setup.duration_s, exp_setup.controller_hz)
    if platform_vc:
        setup = setup + platform.vc_hooks
    out = []
    for point in expand_grid(criteria):
        pre = merge_changesets(point.changes, setup)
        out.append((pre, extra.for_experiment(point.index)))
    return out


def generate_batch(
    root: Path,
    template: XmlTree,
    criteria: BatchCriteria,
    n_runs: int,
    exp_setup: ExpSetup,
    platform: PlatformPlugin,
    manifest: BatchManifest,
    seeds: SeedTable,
    extra: ExtraChanges | None = None,
) -> BatchLayout:
    """Write every ``exp<i>/run<j>/input.xml`` plus the manifest, all-or-nothing.

    Inputs are built in a temporary sibling directory and swapped in only once
    every experiment succeeded.
    """
    if n_runs < 1:
        raise UsageError("--n-runs must be >= 1")
    layout = BatchLayout(Path(root))
    if seeds.shape != (criteria.cardinality, n_runs):
        raise SeedTableError(f"seed table is {seeds.shape}, batch is {(criteria.cardinality, n_runs)}")
    plans = experiment_trees(template, criteria, exp_setup, platform, extra, manifest.platform_vc)

    layout.root.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=layout.root, prefix=".exp-inputs."))
    try:
        for i, (pre, post) in enumerate(plans):
            base = apply_changeset(template, pre)
            for j in range(n_runs):
                tree = apply_changeset(base, platform.seed_change(seeds.seed(i, j)) + post)
                run_dir = staging / f"exp{i}" / f"run{j}"
                run_dir.mkdir(parents=True)
                (run_dir / "input.xml").write_bytes(tree.serialize())
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise

    old = None
    if layout.inputs.exists():
        old = layout.root / f".exp-inputs.old.{os.getpid()}"
        os.replace(layout.inputs, old)
    os.replace(staging, layout.inputs)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)

    if layout.manifest_path.is_file():
        try:
            manifest.created = layout.read_manifest().created or manifest.created
        except ConfigError:
            pass
    if not manifest.created:
        manifest.created = now_iso()
    atomic_write(layout.seeds_path, seeds.to_yaml())
    atomic_write(layout.manifest_path, manifest.to_yaml())
    return layout
