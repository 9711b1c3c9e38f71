"""XML template loading, changesets, and canonical serialization.

Paths are slash-separated element paths rooted at the document element, e.g.
``/refsim/agents`` or ``/launch/group[1]/node``.  An ``[k]`` suffix selects the
k-th (0-based) child with that tag; a bare segment selects the first one.
"""

from __future__ import annotations

import copy
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import XmlError

OPS = ("set_attr", "add_elem", "remove_elem", "set_text")

_SEGMENT_RE = re.compile(r"^(?P<tag>[^\[\]/]+)(?:\[(?P<idx>\d+)\])?$")


@dataclass(frozen=True)
class Change:
    """One XML mutation.

    ``set_attr``: set attribute ``name`` of ``path`` to ``value`` (created if absent).
    ``set_text``: replace the text of ``path`` with ``value``.
    ``add_elem``: append a child element ``name`` under ``path``, text ``value``.
    ``remove_elem``: remove ``path``.
    """

    op: str
    path: str
    name: str | None = None
    value: str | None = None

    def __post_init__(self):
        if self.op not in OPS:
            raise XmlError(f"unknown change op {self.op!r}; expected one of {OPS}")
        if self.op in ("set_attr", "add_elem") and not self.name:
            raise XmlError(f"{self.op} on {self.path} requires a name")
        if self.op in ("set_attr", "set_text") and self.value is None:
            raise XmlError(f"{self.op} on {self.path} requires a value")

    def to_dict(self) -> dict:
        d = {"op": self.op, "path": self.path}
        if self.name is not None:
            d["name"] = self.name
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Change":
        try:
            value = d.get("value")
            return cls(
                op=d["op"],
                path=d["path"],
                name=d.get("name"),
                value=None if value is None else str(value),
            )
        except (KeyError, TypeError) as exc:
            raise XmlError(f"malformed change {d!r}: {exc}") from None

    def target_key(self) -> tuple[str, str, str | None] | None:
        """Location written by this change, for conflict detection."""
        if self.op == "set_attr":
            return ("attr", self.path, self.name)
        if self.op == "set_text":
            return ("text", self.path, None)
        if self.op == "remove_elem":
            return ("elem", self.path, None)
        return None


@dataclass(frozen=True)
class AttributeChangeSet:
    changes: tuple[Change, ...] = ()

    def __add__(self, other: "AttributeChangeSet") -> "AttributeChangeSet":
        return AttributeChangeSet(self.changes + other.changes)

    def __len__(self) -> int:
        return len(self.changes)

    def __iter__(self):
        return iter(self.changes)

    @classmethod
    def of(cls, changes: Iterable[Change]) -> "AttributeChangeSet":
        return cls(tuple(changes))

    @classmethod
    def from_list(cls, items: Sequence[dict] | None) -> "AttributeChangeSet":
        return cls(tuple(Change.from_dict(d) for d in (items or ())))

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.changes]


@dataclass
class XmlTree:
    root: ET.Element
    source_path: Path | None = None

    def copy(self) -> "XmlTree":
        return XmlTree(copy.deepcopy(self.root), self.source_path)

    def serialize(self) -> bytes:
        return canonical_bytes(self.root)


def _parser() -> ET.XMLParser:
    return ET.XMLParser(target=ET.TreeBuilder(insert_comments=True, insert_pis=True))


def parse_bytes(data: bytes, source: str | Path | None = None) -> XmlTree:
    try:
        root = ET.fromstring(data, parser=_parser())
    except ET.ParseError as exc:
        line, col = exc.position
        raise XmlError(f"{source or '<xml>'}: parse error at line {line}, column {col}: {exc}") from None
    return XmlTree(root, Path(source) if source else None)


def load_template(path: str | Path) -> XmlTree:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise XmlError(f"cannot read template {path}: {exc.strerror}") from None
    return parse_bytes(data, path)


def canonical_bytes(root: ET.Element) -> bytes:
    """UTF-8, 2-space indent, attributes in insertion order."""
    root = copy.deepcopy(root)
    ET.indent(root, space="  ")
    body = ET.tostring(root, encoding="unicode")
    return ('<?xml version="1.0" encoding="UTF-8"?>\n' + body + "\n").encode("utf-8")


def _split_path(path: str) -> list[tuple[str, int | None]]:
    if not path.startswith("/"):
        raise XmlError(f"path {path!r} must be absolute (start with '/')")
    segs = []
    for raw in path.strip("/").split("/"):
        m = _SEGMENT_RE.match(raw)
        if not m:
            raise XmlError(f"bad path segment {raw!r} in {path!r}")
        idx = m.group("idx")
        segs.append((m.group("tag"), int(idx) if idx is not None else None))
    return segs


def resolve(root: ET.Element, path: str) -> tuple[ET.Element | None, ET.Element]:
    """Return (parent, element) for ``path``; raise XmlError if absent."""
    segs = _split_path(path)
    tag, idx = segs[0]
    if tag != root.tag or idx not in (None, 0):
        raise XmlError(f"path {path!r} does not start at root <{root.tag}>")
    parent, node = None, root
    for tag, idx in segs[1:]:
        matches = [c for c in node if c.tag == tag]
        k = idx or 0
        if k >= len(matches):
            raise XmlError(f"path {path!r}: no element <{tag}>[{k}]")
        parent, node = node, matches[k]
    return parent, node


def apply_changeset(tree: XmlTree, cs: AttributeChangeSet | Iterable[Change]) -> XmlTree:
    """Apply changes in order to a copy of ``tree``; the input is untouched."""
    out = tree.copy()
    for i, ch in enumerate(cs):
        try:
            parent, node = resolve(out.root, ch.path)
        except XmlError as exc:
            raise XmlError(f"change #{i} ({ch.op}): {exc}") from None
        if ch.op == "set_attr":
            node.set(ch.name, ch.value)
        elif ch.op == "set_text":
            node.text = ch.value
        elif ch.op == "add_elem":
            child = ET.SubElement(node, ch.name)
            if ch.value is not None:
                child.text = ch.value
        elif ch.op == "remove_elem":
            if parent is None:
                raise XmlError(f"change #{i} (remove_elem): cannot remove root {ch.path!r}")
            parent.remove(node)
    return out


def get_attr(tree: XmlTree, path: str, name: str) -> str | None:
    _, node = resolve(tree.root, path)
    return node.get(name)
