"""Stage 3: intra-experiment and inter-experiment statistics.

Conventions:

* stddev is the sample standard deviation (n - 1 denominator), 0 for one run;
* the 95% interval is the normal approximation ``mean +/- 1.96 * stddev / sqrt(n)``;
* quantiles interpolate linearly between closest ranks.

Stage 3 reads only ``exp-outputs/`` and writes only ``statistics/``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import StatsError
from .generation import BatchLayout, BatchManifest, atomic_write
from .storage import CSV, DataTable, StoragePlugin, read_run_table

log = logging.getLogger(__name__)

Z95 = 1.96
STAT_IDS = ("mean", "stddev", "ciL95", "ciH95", "min", "q1", "median", "q3", "max")
DIST_STATS = {
    "conf95": ("mean", "stddev", "ciL95", "ciH95"),
    "bw": ("mean", "min", "q1", "median", "q3", "max"),
    "all": STAT_IDS,
}
REDUCERS = ("final", "mean", "max", "sum")


def dist_stats(values: np.ndarray) -> dict[str, np.ndarray]:
    """Statistics over axis 0 of ``values`` (runs first)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n == 0:
        raise StatsError("no runs to summarize")
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    half = Z95 * std / np.sqrt(n)
    q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0, method="linear")
    return {
        "mean": mean,
        "stddev": std,
        "ciL95": mean - half,
        "ciH95": mean + half,
        "min": q[0],
        "q1": q[1],
        "median": q[2],
        "q3": q[3],
        "max": q[4],
    }


@dataclass
class RunStack:
    exp_index: int
    stem: str
    tables: list[DataTable]
    runs: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.tables:
            raise StatsError(f"exp{self.exp_index}/{self.stem}: no readable runs")
        ref = self.tables[0]
        for run, t in zip(self.runs or range(len(self.tables)), self.tables):
            if t.columns != ref.columns or t.shape != ref.shape:
                raise StatsError(
                    f"exp{self.exp_index}/{self.stem}: run{run} has shape {t.shape} columns {t.columns}, "
                    f"expected {ref.shape} columns {ref.columns}"
                )

    @property
    def columns(self) -> list[str]:
        return self.tables[0].columns

    def array(self) -> np.ndarray:
        return np.stack([t.rows for t in self.tables])


@dataclass
class StatsBundle:
    columns: list[str]
    stats: dict[str, np.ndarray]
    n: int

    def table(self, stat: str) -> DataTable:
        return DataTable(stat, self.columns, self.stats[stat])


def intra_exp_stats(stack: RunStack) -> StatsBundle:
    return StatsBundle(stack.columns, dist_stats(stack.array()), len(stack.tables))


def failed_runs(layout: BatchLayout, i: int) -> set[int]:
    path = layout.exec_path(i)
    if not path.is_file():
        return set()
    doc = yaml.safe_load(path.read_text()) or {}
    return {r["run"] for r in doc.get("runs", []) if r.get("exit_code", 0) != 0}


def usable_runs(layout: BatchLayout, i: int, n_runs: int) -> tuple[list[int], dict[int, str]]:
    bad = failed_runs(layout, i)
    ok, skipped = [], {}
    for j in range(n_runs):
        if j in bad:
            skipped[j] = "run failed"
        elif not layout.run_output(i, j).is_dir():
            skipped[j] = "no output directory"
        else:
            ok.append(j)
    return ok, skipped


def collate_runs(
    layout: BatchLayout,
    i: int,
    stem: str,
    runs: list[int],
    storage: StoragePlugin = CSV,
    index_column: str | None = None,
    skipped: dict[int, str] | None = None,
) -> RunStack:
    tables, used = [], []
    for j in runs:
        try:
            tables.append(read_run_table(layout.run_output(i, j), stem, storage, index_column))
            used.append(j)
        except FileNotFoundError:
            log.warning("exp%d/run%d: no %s output; run excluded", i, j, stem)
            if skipped is not None:
                skipped[j] = f"missing {stem}"
    return RunStack(i, stem, tables, used)


def write_bundle(out_dir: Path, stem: str, bundle: StatsBundle, which: str) -> list[Path]:
    paths = []
    for stat in DIST_STATS[which]:
        p = Path(out_dir) / f"{stem}.{stat}.csv"
        atomic_write(p, CSV.dumps(bundle.table(stat)))
        paths.append(p)
    return paths


def heatmap_frames(
    layout: BatchLayout, i: int, stem: str, runs: list[int], storage: StoragePlugin = CSV
) -> list[np.ndarray]:
    """Cellwise mean over runs of each snapshot ``<stem>.<k>``."""
    if not runs:
        raise StatsError(f"exp{i}: no runs for frames of {stem}")
    per_run = {j: storage.discover(layout.run_output(i, j))[1].get(stem, []) for j in runs}
    ks = per_run[runs[0]]
    for j, found in per_run.items():
        if found != ks:
            missing = sorted(set(ks) ^ set(found))
            raise StatsError(f"exp{i}/run{j}: snapshot set for {stem} differs (indices {missing})")
    frames = []
    for k in ks:
        mats = [storage.read(storage.snapshot_path(layout.run_output(i, j), stem, k)) for j in runs]
        shape = mats[0].shape
        for j, m in zip(runs, mats):
            if m.shape != shape:
                raise StatsError(f"exp{i}/run{j}: snapshot {stem}.{k} has shape {m.shape}, expected {shape}")
        frames.append(np.mean(np.stack([m.rows for m in mats]), axis=0))
    return frames


def frames_dir(layout: BatchLayout, i: int) -> Path:
    return layout.exp_stats(i) / "frames"


def write_frames(layout: BatchLayout, i: int, stem: str, frames: list[np.ndarray]) -> None:
    for k, f in enumerate(frames):
        cols = [f"x{c}" for c in range(f.shape[1])]
        atomic_write(frames_dir(layout, i) / f"{stem}.{k}.csv", CSV.dumps(DataTable(stem, cols, f)))


def read_frames(layout: BatchLayout, i: int, stem: str) -> list[np.ndarray]:
    d = frames_dir(layout, i)
    ks = CSV.discover(d)[1].get(stem, [])
    return [CSV.read(CSV.snapshot_path(d, stem, k)).rows for k in ks]


# --- inter-experiment --------------------------------------------------------


def reduce_column(col: np.ndarray, reducer: str) -> float:
    if reducer == "final":
        return float(col[-1])
    if reducer == "mean":
        return float(np.mean(col))
    if reducer == "max":
        return float(np.max(col))
    if reducer == "sum":
        return float(np.sum(col))
    raise StatsError(f"unknown reducer {reducer!r}; choose from {REDUCERS}")


@dataclass
class SummaryTable:
    stem: str
    column: str
    reducer: str
    shape: tuple[int, int]
    n: np.ndarray  # runs used per experiment
    stats: dict[str, np.ndarray]  # stat -> (cardinality,)

    @property
    def cardinality(self) -> int:
        return self.shape[0] * self.shape[1]

    def matrix(self, stat: str = "mean") -> np.ndarray:
        return self.stats[stat].reshape(self.shape)

    def to_csv(self) -> str:
        rows = []
        for e in range(self.cardinality):
            r, c = divmod(e, self.shape[1])
            rows.append([e, r, c, self.n[e]] + [self.stats[s][e] for s in STAT_IDS])
        t = DataTable("summary", ["exp", "row", "col", "n", *STAT_IDS], np.array(rows, dtype=float))
        return CSV.dumps(t)

    @classmethod
    def from_csv(cls, path: Path, stem: str, column: str, reducer: str = "final") -> "SummaryTable":
        t = CSV.read(path)
        rows = t.column("row").astype(int)
        cols = t.column("col").astype(int)
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)
        return cls(stem, column, reducer, shape, t.column("n"), {s: t.column(s) for s in STAT_IDS})


def inter_exp_stats(
    layout: BatchLayout,
    manifest: BatchManifest,
    stem: str,
    column: str,
    reducer: str = "final",
    storage: StoragePlugin = CSV,
) -> SummaryTable:
    """Reduce ``column`` per run, then summarize across runs per experiment.

    Experiments without usable outputs yield NaN rows.
    """
    if reducer not in REDUCERS:
        raise StatsError(f"unknown reducer {reducer!r}; choose from {REDUCERS}")
    card = manifest.cardinality
    out = {s: np.full(card, np.nan) for s in STAT_IDS}
    n = np.zeros(card)
    for e in range(card):
        runs, _ = usable_runs(layout, e, manifest.n_runs)
        reduced = []
        for j in runs:
            try:
                t = read_run_table(layout.run_output(e, j), stem, storage)
            except FileNotFoundError:
                continue
            if column not in t.columns:
                raise StatsError(f"unknown column {column!r} in {stem}; available: {t.columns}")
            if len(t.rows):
                reduced.append(reduce_column(t.column(column), reducer))
        if not reduced:
            log.warning("exp%d: no usable %s outputs for inter-experiment summary", e, stem)
            continue
        st = dist_stats(np.array(reduced))
        for s in STAT_IDS:
            out[s][e] = st[s]
        n[e] = len(reduced)
    return SummaryTable(stem, column, reducer, manifest.shape, n, out)


def summary_path(layout: BatchLayout, stem: str, column: str) -> Path:
    return layout.statistics / "collated" / f"{stem}.{column}.csv"


# --- stage driver ---------------------------------------------------------------


def process_batch(
    layout: BatchLayout,
    manifest: BatchManifest,
    exp_range,
    which: str = "conf95",
    reducer: str = "final",
    storage: StoragePlugin = CSV,
    index_column: str | None = None,
) -> dict:
    """Run all of stage 3 for the experiments in ``exp_range``."""
    if which not in DIST_STATS:
        raise StatsError(f"unknown --dist-stats {which!r}; choose from {sorted(DIST_STATS)}")
    report = {"experiments": [], "summaries": []}
    table_stems: set[str] = set()
    columns: dict[str, list[str]] = {}
    for i in exp_range:
        runs, skipped = usable_runs(layout, i, manifest.n_runs)
        if not runs:
            raise StatsError(f"exp{i}: no usable runs under {layout.exp_output(i)}")
        tables, snaps = storage.discover(layout.run_output(i, runs[0]))
        out_dir = layout.exp_stats(i)
        used: dict[str, list[int]] = {}
        for stem in tables:
            stack = collate_runs(layout, i, stem, runs, storage, index_column, skipped)
            write_bundle(out_dir, stem, intra_exp_stats(stack), which)
            used[stem] = stack.runs
            table_stems.add(stem)
            columns.setdefault(stem, stack.columns)
        for stem in snaps:
            write_frames(layout, i, stem, heatmap_frames(layout, i, stem, runs, storage))
        for j, why in sorted(skipped.items()):
            log.warning("exp%d/run%d excluded: %s", i, j, why)
        meta = {
            "exp": i,
            "dist_stats": which,
            "runs_used": used,
            "runs_excluded": {int(j): why for j, why in sorted(skipped.items())},
            "snapshots": {s: len(ks) for s, ks in snaps.items()},
        }
        atomic_write(out_dir / "manifest.yaml", yaml.safe_dump(meta, sort_keys=False))
        report["experiments"].append(i)

    for stem in sorted(table_stems):
        for col in columns[stem]:
            if col == index_column:
                continue
            summary = inter_exp_stats(layout, manifest, stem, col, reducer, storage)
            atomic_write(summary_path(layout, stem, col), summary.to_csv())
            report["summaries"].append(f"{stem}.{col}")
    return report
