"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class XBatchError(Exception):
    """Base class for all tool errors."""


class UsageError(XBatchError):
    """Bad command line."""


class ConfigError(XBatchError):
    """Invalid configuration, manifest, or environment."""


class CriteriaParseError(XBatchError):
    """A batch-criteria token could not be parsed.

    ``offset`` is the character index of the offending segment in ``token``.
    """

    def __init__(self, token: str, offset: int, message: str):
        self.token = token
        self.offset = offset
        super().__init__(f"{message} (token {token!r}, offset {offset})")


class UnknownParserError(XBatchError):
    """No parser registered for a criterion's parser id."""


class ChangeConflictError(XBatchError):
    """Two changesets write the same XML location with different values."""


class XmlError(XBatchError):
    """Malformed template or an unresolvable changeset path."""


class SeedTableError(XBatchError):
    pass


class ExpRangeError(XBatchError):
    pass


class ExecError(XBatchError):
    pass


class StatsError(XBatchError):
    pass


class DeliverableError(XBatchError):
    pass


class CompareError(XBatchError):
    pass
