"""Genealogy logs carried by self-replicating live USB keys.

A key's genealogy is a line-oriented text record of its history: an
optional provenance header describing the built image, followed by the
events the key went through.  Line tags:

    p   provenance header ("<label> <build-date> <locale> - <suite> - <arch>")
    i   birth: the key was (re)initialised at a timestamp
    s   spawn: the key cloned itself onto another key
    u   upgrade: another key rewrote this key's system; the donor key's
        own genealogy is embedded, indented, below the "u" line

A "u" line may inline the donor's provenance descriptor, prefixed with
"p" when the donor record carried a proper header.  Event lines hold
"timestamp - locale - capacity - batch" fields, where capacity is the
device size in 1 KiB blocks and batch is the number of keys written in
one clone operation (right-aligned to a 10-character column).

Parsing is lenient about indentation: after a "u" line, the first
following deeper line fixes the donor block's level, and any shallower
line returns attribution to the containing record.  Serialization is
canonical: two spaces per nesting level, host events at the record's
own level, donor provenance inlined on the "u" line.
"""

from __future__ import annotations

import datetime
import enum
import re
import warnings
from dataclasses import dataclass, field

__all__ = [
    "EventKind",
    "ProvenanceHeader",
    "GenealogyEvent",
    "UpgradeEvent",
    "Genealogy",
    "LineageStats",
    "GenealogyParseError",
    "GenealogyWarning",
    "parse",
    "serialize",
    "record_birth",
    "record_spawn",
    "record_upgrade",
    "child_genealogy",
    "stats",
    "own_spawn_count",
    "lint",
]

_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}[+-]\d{2}:\d{2}$")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_FIELD_SEP_RE = re.compile(r"\s+-\s+")
_SEP_IN_TEXT_RE = re.compile(r"\s-\s")
_BATCH_WIDTH = 10
_INDENT = "  "


class GenealogyParseError(ValueError):
    """Raised for malformed genealogy text; carries the 1-based line number."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class GenealogyWarning(UserWarning):
    """Lint-level issue in an accepted genealogy (clock drift and the like)."""


class EventKind(enum.Enum):
    BIRTH = "i"
    SPAWN = "s"


def _check_field(name: str, value: str, allow_space: bool = False) -> None:
    if not value:
        raise ValueError(f"{name} must be non-empty")
    if value != value.strip():
        raise ValueError(f"{name} must not have surrounding whitespace: {value!r}")
    if "\n" in value or "\r" in value:
        raise ValueError(f"{name} must be a single line: {value!r}")
    if _SEP_IN_TEXT_RE.search(value):
        raise ValueError(f"{name} must not contain the field separator ' - ': {value!r}")
    if value.startswith("-") or value.endswith("-"):
        # a leading or trailing dash would fuse with the ' - ' separators
        # around the field and change how the line splits back
        raise ValueError(f"{name} must not start or end with '-': {value!r}")
    if not allow_space and any(c.isspace() for c in value):
        raise ValueError(f"{name} must be a single token: {value!r}")


@dataclass(frozen=True)
class ProvenanceHeader:
    """Descriptor of a built key image: product label, build date, build
    locale, distribution suite, and architecture."""

    label: str
    build_date: datetime.date
    locale: str
    suite: str
    arch: str

    def __post_init__(self):
        _check_field("label", self.label, allow_space=True)
        if not isinstance(self.build_date, datetime.date) or isinstance(
            self.build_date, datetime.datetime
        ):
            raise ValueError(f"build_date must be a date: {self.build_date!r}")
        _check_field("locale", self.locale)
        _check_field("suite", self.suite, allow_space=True)
        _check_field("arch", self.arch, allow_space=True)

    def descriptor(self) -> str:
        """The single-line serialized form (without a leading tag)."""
        return (
            f"{self.label} {self.build_date.isoformat()} {self.locale}"
            f" - {self.suite} - {self.arch}"
        )

    @classmethod
    def from_descriptor(cls, text: str) -> "ProvenanceHeader":
        """Parse a descriptor line back into a header.

        Raises ValueError when the text does not have the
        "<label> <date> <locale> - <suite> - <arch>" shape.
        """
        chunks = _FIELD_SEP_RE.split(text.strip())
        if len(chunks) != 3:
            raise ValueError(f"expected 3 ' - '-separated fields, got {len(chunks)}")
        head, suite, arch = chunks
        parts = head.rsplit(None, 2)
        if len(parts) != 3:
            raise ValueError(f"descriptor head too short: {head!r}")
        label, date_text, locale = parts
        if not _DATE_RE.match(date_text):
            raise ValueError(f"malformed build date: {date_text!r}")
        return cls(
            label=label,
            build_date=datetime.date.fromisoformat(date_text),
            locale=locale,
            suite=suite,
            arch=arch,
        )


@dataclass(frozen=True)
class GenealogyEvent:
    """A birth ("i") or spawn ("s") with its timestamp, the locale in use,
    the device capacity in 1 KiB blocks, and the clone batch size."""

    kind: EventKind
    timestamp: datetime.datetime
    locale: str
    capacity: int
    batch_count: int = 1

    def __post_init__(self):
        if not isinstance(self.kind, EventKind):
            raise ValueError(f"kind must be an EventKind, got {self.kind!r}")
        ts = self.timestamp
        if not isinstance(ts, datetime.datetime) or ts.tzinfo is None:
            raise ValueError("timestamp must be an offset-aware datetime")
        if ts.microsecond != 0:
            raise ValueError("timestamp resolution is one second")
        offset = ts.utcoffset()
        if offset is None or offset.seconds % 60 != 0 or offset.microseconds:
            raise ValueError("UTC offset must be whole minutes")
        _check_field("locale", self.locale)
        if self.capacity <= 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if self.batch_count < 1:
            raise ValueError(f"batch_count must be >= 1, got {self.batch_count}")


@dataclass(frozen=True)
class UpgradeEvent:
    """Another key installed its system over this one.  The donor's own
    genealogy at the moment of the upgrade is embedded by value;
    ``donor_has_provenance`` records whether the donor descriptor was
    written as a proper "p" header on the "u" line."""

    donor: "Genealogy"
    donor_has_provenance: bool | None = None

    def __post_init__(self):
        if not isinstance(self.donor, Genealogy):
            raise ValueError("donor must be a Genealogy")
        if self.donor_has_provenance is None:
            object.__setattr__(
                self, "donor_has_provenance", self.donor.provenance is not None
            )
        if self.donor_has_provenance and self.donor.provenance is None:
            raise ValueError("donor_has_provenance requires a donor provenance header")


@dataclass(frozen=True)
class Genealogy:
    """An immutable genealogy record: optional provenance header plus an
    ordered run of events (births, spawns, embedded upgrades)."""

    provenance: ProvenanceHeader | None = None
    events: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for ev in self.events:
            if not isinstance(ev, (GenealogyEvent, UpgradeEvent)):
                raise ValueError(f"unexpected event type: {ev!r}")


@dataclass(frozen=True)
class LineageStats:
    """Recursive counts over a genealogy, embedded donor records included."""

    birth_count: int = 0
    spawn_count: int = 0
    upgrade_count: int = 0
    provenance_count: int = 0
    max_embedding_depth: int = 0
    first_event: datetime.datetime | None = None
    last_event: datetime.datetime | None = None


# ---------------------------------------------------------------------------
# parsing


@dataclass(frozen=True)
class _Line:
    lineno: int
    indent: int
    tag: str
    payload: str


def _tokenize(text: str) -> list[_Line]:
    tokens = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        stripped = line.lstrip(" ")
        if stripped[0] == "\t" or "\t" in line[: len(line) - len(stripped)]:
            raise GenealogyParseError(lineno, "tab in indentation")
        indent = len(line) - len(stripped)
        tag, _, payload = stripped.partition(" ")
        if tag not in ("p", "i", "s", "u"):
            raise GenealogyParseError(lineno, f"unknown line tag {tag!r}")
        tokens.append(_Line(lineno, indent, tag, payload.strip()))
    return tokens


def _parse_timestamp(text: str, lineno: int) -> datetime.datetime:
    if not _TIMESTAMP_RE.match(text):
        raise GenealogyParseError(lineno, f"malformed timestamp {text!r}")
    try:
        return datetime.datetime.fromisoformat(text)
    except ValueError as exc:
        raise GenealogyParseError(lineno, f"malformed timestamp {text!r}: {exc}") from None


def _parse_event(tok: _Line) -> GenealogyEvent:
    fields = _FIELD_SEP_RE.split(tok.payload)
    if len(fields) != 4:
        raise GenealogyParseError(
            tok.lineno, f"expected 4 event fields, got {len(fields)}"
        )
    ts_text, locale, capacity_text, batch_text = (f.strip() for f in fields)
    timestamp = _parse_timestamp(ts_text, tok.lineno)
    try:
        capacity = int(capacity_text)
        batch = int(batch_text)
    except ValueError:
        raise GenealogyParseError(
            tok.lineno, f"malformed integer field in {tok.payload!r}"
        ) from None
    kind = EventKind.BIRTH if tok.tag == "i" else EventKind.SPAWN
    try:
        return GenealogyEvent(kind, timestamp, locale, capacity, batch)
    except ValueError as exc:
        raise GenealogyParseError(tok.lineno, str(exc)) from None


def _parse_provenance(text: str, lineno: int) -> ProvenanceHeader:
    try:
        return ProvenanceHeader.from_descriptor(text)
    except ValueError as exc:
        raise GenealogyParseError(lineno, f"malformed provenance descriptor: {exc}") from None


def _parse_record(
    toks: list[_Line],
    i: int,
    base_indent: int,
    inline_prov: ProvenanceHeader | None,
) -> tuple[Genealogy, int]:
    """Parse one record's lines starting at ``toks[i]``.

    The record claims every line with indent >= base_indent until a
    shallower line (or the end of input) hands control back to the
    caller.  A "u" line opens a donor block whose level is set by the
    first following deeper line.
    """
    provenance = inline_prov
    events: list = []
    while i < len(toks) and toks[i].indent >= base_indent:
        tok = toks[i]
        if tok.tag == "p":
            if provenance is not None:
                raise GenealogyParseError(tok.lineno, "provenance already given")
            if events:
                raise GenealogyParseError(
                    tok.lineno, "provenance header must precede events"
                )
            provenance = _parse_provenance(tok.payload, tok.lineno)
            i += 1
        elif tok.tag in ("i", "s"):
            events.append(_parse_event(tok))
            i += 1
        else:  # "u"
            has_p = False
            desc_text = tok.payload
            if desc_text == "p" or desc_text.startswith("p "):
                has_p = True
                desc_text = desc_text[1:].strip()
            if has_p and not desc_text:
                raise GenealogyParseError(
                    tok.lineno, "provenance descriptor expected after 'u p'"
                )
            donor_prov = (
                _parse_provenance(desc_text, tok.lineno) if desc_text else None
            )
            if i + 1 < len(toks) and toks[i + 1].indent > tok.indent:
                donor, i = _parse_record(toks, i + 1, toks[i + 1].indent, donor_prov)
            else:
                donor = Genealogy(provenance=donor_prov)
                i += 1
            if donor.provenance is None and not donor.events:
                raise GenealogyParseError(
                    tok.lineno, "upgrade with no donor events and no descriptor"
                )
            events.append(UpgradeEvent(donor=donor, donor_has_provenance=has_p))
    return Genealogy(provenance=provenance, events=tuple(events)), i


def parse(text: bytes | str) -> Genealogy:
    """Parse genealogy text into a structured record.

    Accepts canonical output as well as hand-written indentation.  Raises
    GenealogyParseError (naming the line) for malformed input; emits
    GenealogyWarning for lint-level issues such as out-of-order
    timestamps.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GenealogyParseError(0, f"input is not valid UTF-8: {exc}") from None
    toks = _tokenize(text)
    record, i = _parse_record(toks, 0, 0, None)
    if i != len(toks):  # unreachable with base_indent 0; kept as a guard
        raise GenealogyParseError(toks[i].lineno, "unattributed trailing line")
    for message in lint(record):
        warnings.warn(message, GenealogyWarning, stacklevel=2)
    return record


# ---------------------------------------------------------------------------
# serialization


def _event_line(ev: GenealogyEvent, level: int) -> str:
    ts = ev.timestamp.isoformat(sep=" ")
    return (
        f"{_INDENT * level}{ev.kind.value} {ts} - {ev.locale}"
        f" - {ev.capacity} - {ev.batch_count:>{_BATCH_WIDTH}}"
    )


def _record_lines(g: Genealogy, level: int, lines: list[str]) -> None:
    for ev in g.events:
        if isinstance(ev, GenealogyEvent):
            lines.append(_event_line(ev, level))
        else:
            prefix = f"{_INDENT * level}u"
            if ev.donor_has_provenance:
                prefix += " p"
            if ev.donor.provenance is not None:
                prefix += f" {ev.donor.provenance.descriptor()}"
            lines.append(prefix)
            _record_lines(ev.donor, level + 1, lines)


def serialize(g: Genealogy) -> str:
    """Canonical text for a genealogy; ``parse(serialize(g))`` equals ``g``.

    Requires every embedded donor record to carry a descriptor or at
    least one event (a completely empty donor has no written form the
    parser accepts back).
    """
    lines: list[str] = []
    if g.provenance is not None:
        lines.append(f"p {g.provenance.descriptor()}")
    _record_lines(g, 0, lines)
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# record operations


def record_birth(g: Genealogy, ev: GenealogyEvent) -> Genealogy:
    """Append a birth event; returns the extended record."""
    if ev.kind is not EventKind.BIRTH:
        raise ValueError("record_birth requires a Birth event")
    return Genealogy(g.provenance, g.events + (ev,))


def record_spawn(g: Genealogy, ev: GenealogyEvent) -> Genealogy:
    """Append a spawn event; returns the extended record."""
    if ev.kind is not EventKind.SPAWN:
        raise ValueError("record_spawn requires a Spawn event")
    return Genealogy(g.provenance, g.events + (ev,))


def record_upgrade(
    host: Genealogy, donor: Genealogy, rebirth: GenealogyEvent
) -> Genealogy:
    """Record that ``donor`` installed its system over the host: the donor's
    genealogy is embedded as-is, followed by the host's rebirth."""
    if rebirth.kind is not EventKind.BIRTH:
        raise ValueError("rebirth must be a Birth event")
    upgrade = UpgradeEvent(donor=donor)
    return Genealogy(host.provenance, host.events + (upgrade, rebirth))


def child_genealogy(parent: Genealogy, birth: GenealogyEvent) -> Genealogy:
    """The record a fresh clone starts with: the parent's full history
    plus the clone's own birth.  The parent record is not touched."""
    if birth.kind is not EventKind.BIRTH:
        raise ValueError("child birth must be a Birth event")
    return Genealogy(parent.provenance, parent.events + (birth,))


# ---------------------------------------------------------------------------
# analysis


def stats(g: Genealogy) -> LineageStats:
    """Recursive lineage counters.

    Provenance is counted per written "p" tag: the record's own header
    plus every upgrade whose donor descriptor was "p"-tagged on its "u"
    line.  first/last are the extreme timestamps over all events,
    embedded donors included.
    """
    births = spawns = upgrades = provenances = 0
    depth = 0
    first: datetime.datetime | None = None
    last: datetime.datetime | None = None

    def visit_events(events: tuple, level: int) -> None:
        nonlocal births, spawns, upgrades, provenances, depth, first, last
        for ev in events:
            if isinstance(ev, GenealogyEvent):
                if ev.kind is EventKind.BIRTH:
                    births += 1
                else:
                    spawns += 1
                if first is None or ev.timestamp < first:
                    first = ev.timestamp
                if last is None or ev.timestamp > last:
                    last = ev.timestamp
            else:
                upgrades += 1
                if ev.donor_has_provenance:
                    provenances += 1
                depth = max(depth, level + 1)
                visit_events(ev.donor.events, level + 1)

    if g.provenance is not None:
        provenances += 1
    visit_events(g.events, 0)
    return LineageStats(
        birth_count=births,
        spawn_count=spawns,
        upgrade_count=upgrades,
        provenance_count=provenances,
        max_embedding_depth=depth,
        first_event=first,
        last_event=last,
    )


def own_spawn_count(g: Genealogy) -> int:
    """Spawns performed by the key itself: top-level spawn events after
    its last birth (everything earlier is inherited ancestor history)."""
    count = 0
    for ev in g.events:
        if isinstance(ev, GenealogyEvent):
            if ev.kind is EventKind.BIRTH:
                count = 0
            else:
                count += 1
        else:
            count = 0  # the rebirth that follows restarts the key's own run
    return count


def lint(g: Genealogy) -> list[str]:
    """Data-quality warnings: out-of-order timestamps within a contiguous
    event run, and more than one birth before the record's first upgrade.

    The birth check only applies to records that contain an upgrade; a
    clone chain without upgrades legitimately accumulates one inherited
    birth per generation.
    """
    messages: list[str] = []

    def visit(record: Genealogy, where: str) -> None:
        prev: datetime.datetime | None = None
        births_before_upgrade = 0
        seen_upgrade = False
        for idx, ev in enumerate(record.events):
            if isinstance(ev, GenealogyEvent):
                if prev is not None and ev.timestamp < prev:
                    messages.append(
                        f"{where}: event {idx} timestamp {ev.timestamp.isoformat(sep=' ')}"
                        f" precedes {prev.isoformat(sep=' ')}"
                    )
                prev = ev.timestamp
                if not seen_upgrade and ev.kind is EventKind.BIRTH:
                    births_before_upgrade += 1
            else:
                prev = None  # a new contiguous run starts after the upgrade
                seen_upgrade = True
                visit(ev.donor, f"{where}/donor[{idx}]")
        if seen_upgrade and births_before_upgrade > 1:
            messages.append(
                f"{where}: {births_before_upgrade} births before the first upgrade"
            )

    visit(g, "record")
    return messages
