"""Storage plugins: read run outputs into numeric tables.

The built-in ``storage.csv`` reads comma-delimited files with a header row and
``.`` decimals.  Snapshot outputs follow ``<stem>.<k>.csv``.  Other delimited
formats can be declared on the plugin path::

    type: storage
    id: storage.tsv
    delimiter: "\\t"
    extension: tsv
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plugins
from .errors import ConfigError, StatsError

MISSING = ("", "NA", "nan", "NaN")


@dataclass
class DataTable:
    name: str
    columns: list[str]
    rows: np.ndarray  # shape (n_rows, n_cols), float
    index_column: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def column(self, name: str) -> np.ndarray:
        try:
            return self.rows[:, self.columns.index(name)]
        except ValueError:
            raise StatsError(f"table {self.name!r} has no column {name!r}; available: {self.columns}") from None


def format_value(x: float) -> str:
    if math.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class StoragePlugin:
    id: str
    delimiter: str = ","
    extension: str = "csv"

    def table_path(self, run_dir: Path, stem: str) -> Path:
        return Path(run_dir) / f"{stem}.{self.extension}"

    def snapshot_path(self, run_dir: Path, stem: str, k: int) -> Path:
        return Path(run_dir) / f"{stem}.{k}.{self.extension}"

    def discover(self, run_dir: Path) -> tuple[list[str], dict[str, list[int]]]:
        """Table stems and snapshot indices present in a run directory."""
        ext = re.escape(self.extension)
        snap_re = re.compile(rf"^(.+)\.(\d+)\.{ext}$")
        tab_re = re.compile(rf"^([^.]+)\.{ext}$")
        tables, snaps = [], {}
        for p in sorted(Path(run_dir).iterdir()) if Path(run_dir).is_dir() else []:
            if m := snap_re.match(p.name):
                snaps.setdefault(m.group(1), []).append(int(m.group(2)))
            elif m := tab_re.match(p.name):
                tables.append(m.group(1))
        return tables, {k: sorted(v) for k, v in sorted(snaps.items())}

    def read(self, path: Path, name: str | None = None, index_column: str | None = None) -> DataTable:
        path = Path(path)
        text = path.read_text()
        reader = csv.reader(io.StringIO(text), delimiter=self.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise StatsError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise StatsError(f"{path}:{lineno}: ragged row ({len(row)} cells, header has {len(header)})")
            try:
                rows.append([math.nan if c.strip() in MISSING else float(c) for c in row])
            except ValueError as exc:
                raise StatsError(f"{path}:{lineno}: {exc}") from None
        arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
        if index_column not in header:
            index_column = None
        return DataTable(name or path.name.split(".")[0], header, arr, index_column)

    def dumps(self, table: DataTable) -> str:
        lines = [self.delimiter.join(table.columns)]
        lines += [self.delimiter.join(format_value(x) for x in row) for row in table.rows]
        return "\n".join(lines) + "\n"


CSV = StoragePlugin("storage.csv")
BUILTINS = {CSV.id: CSV}


def resolve_storage(sid: str, search: list[Path] | None = None) -> StoragePlugin:
    if sid in BUILTINS:
        return BUILTINS[sid]
    m = plugins.find("storage", sid, search)
    if m is None:
        raise ConfigError(f"storage medium {sid!r} not found; built-ins: {sorted(BUILTINS)}")
    return StoragePlugin(sid, str(m.data.get("delimiter", ",")), str(m.data.get("extension", "csv")))


def read_run_table(run_dir: Path, stem: str, storage: StoragePlugin = CSV, index_column: str | None = None) -> DataTable:
    """Raises FileNotFoundError when the run produced no such output."""
    return storage.read(storage.table_path(run_dir, stem), stem, index_column)
