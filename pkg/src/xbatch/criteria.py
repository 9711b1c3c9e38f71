"""Batch-criteria DSL: parse dotted CLI tokens into experiment axes and expand them.

Tokens are ``<parser_id>.<seg>.<seg>...``.  Because ``.`` delimits segments,
numeric literals use ``p`` as the decimal point (``1p5`` is 1.5).

Built-in grammars::

    population_size.Log128      sizes 1, 2, 4, ..., 128
    population_size.Linear5     sizes 1, 2, ..., 5   (also: population_size.5, system5)
    population_size.Z64         the single size 64
    vel.min=1p0.max=10p0.C10    10 evenly spaced values from 1.0 to 10.0 inclusive
    ta_policy_set.all.Z100      every configured policy, population fixed to 100
    saa_noise.all.C10           noise levels 0.1, 0.2, ..., 1.0 on every target of group "all"
    saa_noise.all.L0p3          the single noise level 0.3
"""

from __future__ import annotations

import math
import re
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from . import plugins
from .errors import (
    ChangeConflictError,
    ConfigError,
    CriteriaParseError,
    UnknownParserError,
    UsageError,
)
from .xmlops import AttributeChangeSet, Change

KINDS = ("population_log", "population_linear", "scalar_range", "policy_set", "noise_levels", "custom")


@dataclass(frozen=True)
class CriterionSpec:
    raw_token: str
    parser_id: str

    @classmethod
    def from_token(cls, token: str) -> "CriterionSpec":
        if not token or any(ch.isspace() for ch in token):
            raise UsageError(f"invalid batch-criteria token {token!r}")
        return cls(token, token.split(".", 1)[0])


@dataclass(frozen=True)
class ValuePoint:
    label: str
    changes: AttributeChangeSet
    value: int | float | str


@dataclass(frozen=True)
class CriterionDef:
    token: str
    parser_id: str
    kind: str
    values: tuple[ValuePoint, ...]
    fixed_context: dict = field(default_factory=dict, hash=False)
    spacing: str = "linear"  # linear | geometric | categorical

    def __post_init__(self):
        if not self.values:
            raise CriteriaParseError(self.token, 0, "criterion expands to no values")
        labels = [v.label for v in self.values]
        if len(set(labels)) != len(labels):
            raise CriteriaParseError(self.token, 0, "criterion expands to duplicate values")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def labels(self) -> list[str]:
        return [v.label for v in self.values]


@dataclass(frozen=True)
class BatchCriteria:
    axis_a: CriterionDef
    axis_b: CriterionDef | None = None

    @property
    def arity(self) -> str:
        return "univariate" if self.axis_b is None else "bivariate"

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.axis_a), (len(self.axis_b) if self.axis_b else 1)

    @property
    def cardinality(self) -> int:
        rows, cols = self.shape
        return rows * cols

    @property
    def tokens(self) -> list[str]:
        return [self.axis_a.token] + ([self.axis_b.token] if self.axis_b else [])


@dataclass(frozen=True)
class ExperimentPoint:
    index: int
    coords: tuple[int, int]
    labels: tuple[str, ...]
    values: tuple
    changes: AttributeChangeSet


# --- numeric helpers -------------------------------------------------------


def parse_number(text: str) -> float:
    """``1p5`` -> 1.5; plain ``.`` is accepted too for in-config values."""
    try:
        x = float(text.replace("p", "."))
    except ValueError:
        raise ValueError(f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise ValueError(f"not a finite number: {text!r}")
    return x


def format_number(x: float) -> str:
    return repr(float(x)).replace(".", "p")


def num_str(x: float) -> str:
    return repr(float(x))


def _segments(token: str) -> list[tuple[int, str]]:
    out, pos = [], 0
    for seg in token.split("."):
        out.append((pos, seg))
        pos += len(seg) + 1
    return out


# --- parsers ---------------------------------------------------------------


class CriterionParser:
    id: str = ""

    def parse(self, spec: CriterionSpec) -> CriterionDef:
        raise NotImplementedError

    def format_point(self, defn: CriterionDef, point: ValuePoint) -> str:
        """Token that parses to a single-value criterion equal to ``point``."""
        raise NotImplementedError


_POP_RE = re.compile(r"^(?:(Log|Linear|Z)(\d+)|(\d+))$")


class PopulationParser(CriterionParser):
    """Population sweeps; the parser id may carry the size (``system100``)."""

    def __init__(self, pid: str, path: str, attr: str):
        self.id, self.path, self.attr = pid, path, attr

    def _point(self, n: int) -> ValuePoint:
        return ValuePoint(f"size={n}", AttributeChangeSet.of([Change("set_attr", self.path, self.attr, str(n))]), n)

    def parse(self, spec: CriterionSpec) -> CriterionDef:
        token = spec.raw_token
        segs = _segments(token)
        head = segs[0][1]
        rest = segs[1:]
        if head != self.id:
            # size embedded in the id, e.g. system100
            suffix = head[len(self.id):]
            if rest or not suffix.isdigit():
                raise CriteriaParseError(token, 0, f"expected {self.id}<N> or {self.id}.<series>")
            code, n, off = "Linear", int(suffix), len(self.id)
        else:
            if len(rest) != 1:
                raise CriteriaParseError(token, len(head), "expected exactly one series segment")
            off, seg = rest[0]
            m = _POP_RE.match(seg)
            if not m:
                raise CriteriaParseError(token, off, f"unknown population series {seg!r}")
            code = m.group(1) or "Linear"
            n = int(m.group(2) or m.group(3))
        if n < 1:
            raise CriteriaParseError(token, off, "population must be >= 1")
        if code == "Log":
            sizes = [2**i for i in range(n.bit_length())]
            kind, spacing = "population_log", "geometric"
        elif code == "Linear":
            sizes = list(range(1, n + 1))
            kind, spacing = "population_linear", "linear"
        else:
            sizes = [n]
            kind, spacing = "population_linear", "linear"
        return CriterionDef(token, self.id, kind, tuple(self._point(s) for s in sizes), {}, spacing)

    def format_point(self, defn, point):
        return f"{self.id}.Z{point.value}"


class ScalarRangeParser(CriterionParser):
    def __init__(self, pid: str, path: str, attr: str):
        self.id, self.path, self.attr = pid, path, attr

    def _point(self, x: float) -> ValuePoint:
        return ValuePoint(
            f"{self.id}={num_str(x)}",
            AttributeChangeSet.of([Change("set_attr", self.path, self.attr, num_str(x))]),
            float(x),
        )

    def parse(self, spec):
        token = spec.raw_token
        segs = _segments(token)[1:]
        if len(segs) != 3:
            raise CriteriaParseError(token, len(spec.parser_id), "expected min=<x>.max=<y>.C<k>")
        (o1, s1), (o2, s2), (o3, s3) = segs
        lo = self._bound(token, o1, s1, "min")
        hi = self._bound(token, o2, s2, "max")
        m = re.fullmatch(r"C(\d+)", s3)
        if not m or int(m.group(1)) < 1:
            raise CriteriaParseError(token, o3, f"expected C<k> with k >= 1, got {s3!r}")
        k = int(m.group(1))
        if hi < lo:
            raise CriteriaParseError(token, o2, "max must be >= min")
        if k == 1:
            xs = [lo]
        else:
            xs = [lo + j * (hi - lo) / (k - 1) for j in range(k)]
            xs[-1] = hi
        return CriterionDef(token, self.id, "scalar_range", tuple(self._point(x) for x in xs), {}, "linear")

    @staticmethod
    def _bound(token: str, offset: int, seg: str, key: str) -> float:
        if not seg.startswith(key + "="):
            raise CriteriaParseError(token, offset, f"expected {key}=<x>, got {seg!r}")
        try:
            return parse_number(seg[len(key) + 1 :])
        except ValueError as exc:
            raise CriteriaParseError(token, offset, str(exc)) from None

    def format_point(self, defn, point):
        x = format_number(point.value)
        return f"{self.id}.min={x}.max={x}.C1"


class PolicySetParser(CriterionParser):
    """Categorical sweep over a configured policy universe."""

    def __init__(self, pid: str, universe: dict[str, list], size_path: str, size_attr: str):
        self.id = pid
        self.universe = {k: AttributeChangeSet.from_list(v) for k, v in (universe or {}).items()}
        self.size_path, self.size_attr = size_path, size_attr

    def parse(self, spec):
        token = spec.raw_token
        segs = _segments(token)[1:]
        if not segs or len(segs) > 2:
            raise CriteriaParseError(token, len(spec.parser_id), "expected <policy|all>[.Z<N>]")
        off, sel = segs[0]
        if not self.universe:
            raise CriteriaParseError(token, off, f"no policy universe configured for {self.id!r}")
        if sel == "all":
            names = list(self.universe)
        elif sel in self.universe:
            names = [sel]
        else:
            raise CriteriaParseError(token, off, f"unknown policy {sel!r}; known: {sorted(self.universe)}")
        ctx, extra = {}, AttributeChangeSet()
        if len(segs) == 2:
            zoff, zseg = segs[1]
            m = re.fullmatch(r"Z(\d+)", zseg)
            if not m or int(m.group(1)) < 1:
                raise CriteriaParseError(token, zoff, f"expected Z<N>, got {zseg!r}")
            ctx["size"] = int(m.group(1))
            extra = AttributeChangeSet.of([Change("set_attr", self.size_path, self.size_attr, m.group(1))])
        points = tuple(ValuePoint(f"policy={n}", self.universe[n] + extra, n) for n in names)
        return CriterionDef(token, self.id, "policy_set", points, ctx, "categorical")

    def format_point(self, defn, point):
        z = f".Z{defn.fixed_context['size']}" if "size" in defn.fixed_context else ""
        return f"{self.id}.{point.value}{z}"


class NoiseLevelsParser(CriterionParser):
    """Noise applied to every (path, attr) target of a named group."""

    def __init__(self, pid: str, groups: dict[str, list], max_level: float = 1.0):
        self.id = pid
        self.groups = {g: [(t["path"], t["attr"]) for t in targets] for g, targets in (groups or {}).items()}
        self.max_level = max_level

    def _point(self, group: str, x: float) -> ValuePoint:
        cs = AttributeChangeSet.of([Change("set_attr", p, a, num_str(x)) for p, a in self.groups[group]])
        return ValuePoint(f"noise={num_str(x)}", cs, float(x))

    def parse(self, spec):
        token = spec.raw_token
        segs = _segments(token)[1:]
        if len(segs) != 2:
            raise CriteriaParseError(token, len(spec.parser_id), "expected <group>.C<k> or <group>.L<x>")
        (goff, group), (loff, lseg) = segs
        if group not in self.groups:
            raise CriteriaParseError(token, goff, f"unknown noise group {group!r}; known: {sorted(self.groups)}")
        if m := re.fullmatch(r"C(\d+)", lseg):
            k = int(m.group(1))
            if k < 1:
                raise CriteriaParseError(token, loff, "C<k> needs k >= 1")
            levels = [(j + 1) * self.max_level / k for j in range(k)]
        elif lseg.startswith("L"):
            try:
                levels = [parse_number(lseg[1:])]
            except ValueError as exc:
                raise CriteriaParseError(token, loff, str(exc)) from None
        else:
            raise CriteriaParseError(token, loff, f"unknown noise series {lseg!r}")
        if any(not 0.0 <= x <= 1.0 for x in levels):
            raise CriteriaParseError(token, loff, "noise levels must lie in [0, 1]")
        return CriterionDef(
            token, self.id, "noise_levels", tuple(self._point(group, x) for x in levels), {"group": group}, "linear"
        )

    def format_point(self, defn, point):
        return f"{self.id}.{defn.fixed_context['group']}.L{format_number(point.value)}"


class PluginParser(CriterionParser):
    """Criterion parser declared by a ``plugin.yaml`` of type ``criteria``.

    The manifest either lists ``values`` statically or names a ``command`` that
    receives the token as its only argument and prints ``{"values": [...]}`` as
    JSON or YAML.  Each value is ``{label, value?, changes: [...]}``.
    """

    def __init__(self, manifest: plugins.PluginManifest):
        self.id = manifest.id
        self.manifest = manifest

    def _load_values(self, token: str) -> dict:
        data = self.manifest.data
        if "values" in data:
            return data
        cmd = data.get("command")
        if not cmd:
            raise ConfigError(f"criteria plugin {self.id!r} declares neither 'values' nor 'command'")
        exe = self.manifest.root / cmd if not Path(cmd).is_absolute() else Path(cmd)
        proc = subprocess.run([str(exe), token], capture_output=True, text=True, cwd=self.manifest.root)
        if proc.returncode != 0:
            raise CriteriaParseError(token, 0, f"plugin parser failed: {proc.stderr.strip()}")
        try:
            return yaml.safe_load(proc.stdout) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"criteria plugin {self.id!r} printed invalid output: {exc}") from None

    def parse(self, spec):
        data = self._load_values(spec.raw_token)
        raw = data.get("values") or []
        points = tuple(
            ValuePoint(str(v["label"]), AttributeChangeSet.from_list(v.get("changes")), v.get("value", v["label"]))
            for v in raw
        )
        return CriterionDef(spec.raw_token, self.id, "custom", points, {}, data.get("spacing", "categorical"))


# --- registry --------------------------------------------------------------

REFSIM_DEFAULTS = {
    "population_size": {"kind": "population", "path": "/refsim/agents", "attr": "count"},
    "n_agents": {"kind": "population", "path": "/refsim/agents", "attr": "count"},
    "system": {"kind": "population", "path": "/refsim/agents", "attr": "count"},
    "vel": {"kind": "scalar_range", "path": "/refsim/agents", "attr": "velocity"},
    "saa_noise": {"kind": "noise_levels", "groups": {"all": [{"path": "/refsim/agents", "attr": "noise"}]}},
    "ta_policy_set": {"kind": "policy_set", "universe": {}, "size_path": "/refsim/agents", "size_attr": "count"},
}


def make_parser(pid: str, cfg: dict) -> CriterionParser:
    kind = cfg.get("kind")
    try:
        if kind == "population":
            return PopulationParser(pid, cfg["path"], cfg["attr"])
        if kind == "scalar_range":
            return ScalarRangeParser(pid, cfg["path"], cfg["attr"])
        if kind == "policy_set":
            return PolicySetParser(pid, cfg.get("universe", {}), cfg["size_path"], cfg["size_attr"])
        if kind == "noise_levels":
            return NoiseLevelsParser(pid, cfg["groups"], float(cfg.get("max_level", 1.0)))
    except KeyError as exc:
        raise ConfigError(f"criterion {pid!r}: missing config key {exc}") from None
    raise ConfigError(f"criterion {pid!r}: unknown kind {kind!r}")


class ParserRegistry:
    """Maps parser ids to parsers; built once, read-only afterwards."""

    def __init__(self, parsers: dict[str, CriterionParser], search: list[Path] | None = None):
        self._parsers = dict(parsers)
        self._search = search

    @classmethod
    def build(cls, config: dict | None = None, search: list[Path] | None = None) -> "ParserRegistry":
        merged = {k: dict(v) for k, v in REFSIM_DEFAULTS.items()}
        for pid, cfg in (config or {}).items():
            merged[pid] = {**merged.get(pid, {}), **cfg}
        return cls({pid: make_parser(pid, cfg) for pid, cfg in merged.items()}, search)

    def __contains__(self, pid: str) -> bool:
        return pid in self._parsers

    def lookup(self, parser_id: str) -> CriterionParser:
        if parser_id in self._parsers:
            return self._parsers[parser_id]
        base = parser_id.rstrip("0123456789")
        if base != parser_id and isinstance(self._parsers.get(base), PopulationParser):
            return self._parsers[base]
        manifest = plugins.find("criteria", parser_id, self._search)
        if manifest is not None:
            return PluginParser(manifest)
        raise UnknownParserError(f"no parser for criterion {parser_id!r}")


# --- operations ------------------------------------------------------------


def tokenize_cli_criteria(args: Sequence[str]) -> tuple[CriterionSpec, ...]:
    if len(args) not in (1, 2):
        raise UsageError(f"--batch-criteria takes 1 or 2 tokens, got {len(args)}")
    return tuple(CriterionSpec.from_token(a) for a in args)


def parse_criterion(spec: CriterionSpec, registry: ParserRegistry) -> CriterionDef:
    return registry.lookup(spec.parser_id).parse(spec)


def parse_batch_criteria(args: Sequence[str], registry: ParserRegistry) -> BatchCriteria:
    specs = tokenize_cli_criteria(args)
    defs = [parse_criterion(s, registry) for s in specs]
    return BatchCriteria(defs[0], defs[1] if len(defs) == 2 else None)


def merge_changesets(a: AttributeChangeSet, b: AttributeChangeSet) -> AttributeChangeSet:
    """``a`` then ``b``; conflicting writes to one location are an error."""
    written = {}
    for ch in a:
        key = ch.target_key()
        if key is not None:
            written[key] = ch.value
    for ch in b:
        key = ch.target_key()
        if key is not None and key in written and written[key] != ch.value:
            where = ch.path + (f"@{ch.name}" if ch.name and ch.op == "set_attr" else "")
            raise ChangeConflictError(f"conflicting writes to {where}: {written[key]!r} vs {ch.value!r}")
    return a + b


def expand_grid(criteria: BatchCriteria) -> list[ExperimentPoint]:
    """Univariate: axis order.  Bivariate: row-major over (axis A, axis B)."""
    a, b = criteria.axis_a, criteria.axis_b
    points = []
    if b is None:
        for i, va in enumerate(a.values):
            points.append(ExperimentPoint(i, (i, 0), (va.label,), (va.value,), va.changes))
        return points
    for r, va in enumerate(a.values):
        for c, vb in enumerate(b.values):
            points.append(
                ExperimentPoint(
                    r * len(b) + c,
                    (r, c),
                    (va.label, vb.label),
                    (va.value, vb.value),
                    merge_changesets(va.changes, vb.changes),
                )
            )
    return points


def criteria_slug(tokens: Sequence[str]) -> str:
    return "+".join(tokens)

