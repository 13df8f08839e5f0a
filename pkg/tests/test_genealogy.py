"""Tests for the genealogy log format: parsing, canonical serialization,
record operations, and lineage statistics."""

import datetime
import warnings
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from replikey.genealogy import (
    EventKind,
    Genealogy,
    GenealogyEvent,
    GenealogyParseError,
    GenealogyWarning,
    LineageStats,
    ProvenanceHeader,
    UpgradeEvent,
    child_genealogy,
    lint,
    own_spawn_count,
    parse,
    record_birth,
    record_spawn,
    record_upgrade,
    serialize,
    stats,
)

DATA = Path(__file__).parent / "data"
UTC = datetime.timezone.utc


def ts(text: str) -> datetime.datetime:
    return datetime.datetime.fromisoformat(text)


def birth(when: str, locale="fr_FR.UTF-8", capacity=4023296, batch=1) -> GenealogyEvent:
    return GenealogyEvent(EventKind.BIRTH, ts(when), locale, capacity, batch)


def spawn(when: str, locale="fr_FR.UTF-8", capacity=4023296, batch=1) -> GenealogyEvent:
    return GenealogyEvent(EventKind.SPAWN, ts(when), locale, capacity, batch)


@pytest.fixture(scope="module")
def sample_text() -> str:
    return (DATA / "sample_genealogy.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="module")
def sample(sample_text) -> Genealogy:
    with warnings.catch_warnings():
        warnings.simplefilter("error", GenealogyWarning)
        return parse(sample_text)


# ---------------------------------------------------------------------------
# the reference log


def test_sample_counts(sample):
    st_ = stats(sample)
    assert st_.birth_count == 6
    assert st_.spawn_count == 12
    assert st_.upgrade_count == 3
    assert st_.provenance_count == 3
    assert st_.max_embedding_depth == 1


def test_sample_attribution(sample):
    """Three upgrades stay on the host record; donor blocks get 3, 1, and
    2 events respectively, leaving the host 3 births and 9 spawns."""
    host_events = [e for e in sample.events if isinstance(e, GenealogyEvent)]
    upgrades = [e for e in sample.events if isinstance(e, UpgradeEvent)]
    assert len(upgrades) == 3
    assert sum(1 for e in host_events if e.kind is EventKind.BIRTH) == 3
    assert sum(1 for e in host_events if e.kind is EventKind.SPAWN) == 9
    assert [len(u.donor.events) for u in upgrades] == [3, 1, 2]


def test_sample_donor_provenance_flags(sample):
    upgrades = [e for e in sample.events if isinstance(e, UpgradeEvent)]
    assert [u.donor_has_provenance for u in upgrades] == [True, False, True]
    # the middle donor still has a parsed descriptor, it just was not
    # written with a "p" tag on its "u" line
    assert all(u.donor.provenance is not None for u in upgrades)


def test_sample_header(sample):
    head = sample.provenance
    assert head is not None
    assert head.label == "Sage 5.6 Debian Live beta4"
    assert head.build_date == datetime.date(2013, 1, 25)
    assert head.locale == "en_US.UTF-8"
    assert head.suite == "wheezy"
    assert head.arch == "686-pae"


def test_sample_first_and_last(sample):
    st_ = stats(sample)
    assert st_.first_event == ts("2013-02-17 13:01:38+00:00")
    assert st_.last_event == ts("2013-06-17 07:15:42+00:00")


def test_sample_parses_without_warnings(sample_text):
    with warnings.catch_warnings():
        warnings.simplefilter("error", GenealogyWarning)
        parse(sample_text)


def test_sample_serialize_fixed_point(sample_text):
    g = parse(sample_text)
    canon = serialize(g)
    assert parse(canon) == g
    assert serialize(parse(canon)) == canon


def test_sample_rebirth_pairs_with_donor_spawn(sample):
    """Each upgrade's following rebirth carries the same timestamp as the
    donor's closing spawn (the donor clones itself onto the host)."""
    events = list(sample.events)
    first_upgrade = next(i for i, e in enumerate(events) if isinstance(e, UpgradeEvent))
    donor = events[first_upgrade].donor
    rebirth = events[first_upgrade + 1]
    assert rebirth.kind is EventKind.BIRTH
    assert donor.events[-1].kind is EventKind.SPAWN
    assert rebirth.timestamp == donor.events[-1].timestamp


# ---------------------------------------------------------------------------
# parsing, small cases


def test_parse_empty_string():
    g = parse("")
    assert g.provenance is None
    assert g.events == ()


def test_parse_blank_lines_only():
    assert parse("\n   \n\n") == Genealogy()


def test_parse_single_line_unpadded_batch():
    g = parse("i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1")
    assert len(g.events) == 1
    ev = g.events[0]
    assert ev.kind is EventKind.BIRTH
    assert ev.capacity == 4023296
    assert ev.batch_count == 1
    assert ev.locale == "fr_FR.UTF-8"


def test_parse_accepts_bytes():
    g = parse(b"i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1")
    assert len(g.events) == 1


def test_parse_bad_utf8():
    with pytest.raises(GenealogyParseError):
        parse(b"i 2013\xff")


def test_parse_crlf_tolerated():
    g = parse("i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\r\n")
    assert len(g.events) == 1


def test_parse_malformed_timestamp_names_line():
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "s 2013-02-17T13:15:19Z - fr_FR.UTF-8 - 4023296 - 1\n"
    )
    with pytest.raises(GenealogyParseError) as exc:
        parse(text)
    assert exc.value.lineno == 2
    assert "timestamp" in str(exc.value)


def test_parse_unknown_tag_names_line():
    with pytest.raises(GenealogyParseError) as exc:
        parse("x 2013-02-17 13:01:38+00:00 - fr - 1 - 1\n")
    assert exc.value.lineno == 1
    assert "tag" in str(exc.value)


def test_parse_bare_upgrade_rejected():
    """A "u" line with no descriptor and no indented donor events leaves
    nothing to attribute the upgrade to."""
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "u\n"
        "i 2013-02-18 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
    )
    with pytest.raises(GenealogyParseError) as exc:
        parse(text)
    assert exc.value.lineno == 2


def test_parse_tab_indent_rejected():
    with pytest.raises(GenealogyParseError):
        parse("\ti 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n")


def test_parse_provenance_after_events_rejected():
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "p Sage 5.6 2013-01-25 en_US.UTF-8 - wheezy - 686-pae\n"
    )
    with pytest.raises(GenealogyParseError) as exc:
        parse(text)
    assert exc.value.lineno == 2


def test_parse_double_provenance_rejected():
    text = (
        "p Sage 5.6 2013-01-25 en_US.UTF-8 - wheezy - 686-pae\n"
        "p Sage 5.6 2013-01-25 en_US.UTF-8 - wheezy - 686-pae\n"
    )
    with pytest.raises(GenealogyParseError) as exc:
        parse(text)
    assert exc.value.lineno == 2


def test_parse_bad_integer_field():
    with pytest.raises(GenealogyParseError):
        parse("i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - huge - 1\n")


def test_parse_wrong_field_count():
    with pytest.raises(GenealogyParseError):
        parse("i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296\n")


def test_donor_block_level_set_by_first_deeper_line():
    """Lines between the "u" indent and the donor level return to the
    host, even when they sit deeper than the "u" line itself."""
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "u p Sage 5.8 2013-04-06 fr_FR.UTF-8 - wheezy - 686-pae\n"
        "      i 2013-04-07 08:44:13+00:00 - fr_FR.UTF-8 - 7692288 - 1\n"
        "      s 2013-04-07 11:58:04+00:00 - fr_FR.UTF-8 - 7692288 - 1\n"
        "   i 2013-04-07 11:58:04+00:00 - fr_FR.UTF-8 - 7692288 - 1\n"
    )
    g = parse(text)
    kinds = [type(e).__name__ for e in g.events]
    assert kinds == ["GenealogyEvent", "UpgradeEvent", "GenealogyEvent"]
    assert len(g.events[1].donor.events) == 2


def test_descriptor_only_upgrade():
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "u Sage 5.8 2013-04-26 en_US.UTF-8 - wheezy - 686-pae\n"
        "i 2013-04-27 10:00:00+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
    )
    g = parse(text)
    up = g.events[1]
    assert isinstance(up, UpgradeEvent)
    assert up.donor.events == ()
    assert up.donor.provenance.label == "Sage 5.8"
    assert up.donor_has_provenance is False


def test_nested_upgrade_depth_two():
    donor_inner = Genealogy(events=(birth("2013-01-01 00:00:00+00:00"),))
    donor_outer = record_upgrade(
        Genealogy(events=(birth("2013-01-02 00:00:00+00:00"),)),
        donor_inner,
        birth("2013-01-03 00:00:00+00:00"),
    )
    host = record_upgrade(
        Genealogy(events=(birth("2013-01-04 00:00:00+00:00"),)),
        donor_outer,
        birth("2013-01-05 00:00:00+00:00"),
    )
    assert stats(host).max_embedding_depth == 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GenealogyWarning)
        assert parse(serialize(host)) == host


# ---------------------------------------------------------------------------
# warnings


def test_out_of_order_timestamps_warn():
    text = (
        "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "s 2013-02-16 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
    )
    with pytest.warns(GenealogyWarning):
        parse(text)


def test_order_not_checked_across_upgrade_boundary():
    """The donor's clock and the host's clock are unrelated; only events
    within one contiguous run are compared."""
    text = (
        "s 2013-05-01 00:00:00+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "u Sage 5.8 2013-04-26 en_US.UTF-8 - wheezy - 686-pae\n"
        "  i 2013-01-01 00:00:00+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
        "i 2013-04-01 00:00:00+00:00 - fr_FR.UTF-8 - 4023296 - 1\n"
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error", GenealogyWarning)
        parse(text)


def test_equal_timestamps_do_not_warn():
    g = Genealogy(
        events=(
            spawn("2013-04-07 11:58:04+00:00"),
            spawn("2013-04-07 11:58:04+00:00"),
        )
    )
    assert lint(g) == []


def test_multiple_births_before_upgrade_warn():
    g = Genealogy(
        events=(
            birth("2013-01-01 00:00:00+00:00"),
            spawn("2013-01-02 00:00:00+00:00"),
            birth("2013-01-03 00:00:00+00:00"),
        )
    )
    upgraded = record_upgrade(
        g,
        Genealogy(events=(birth("2013-02-01 00:00:00+00:00"),)),
        birth("2013-02-02 00:00:00+00:00"),
    )
    assert lint(g) == []  # plain clone chain, nothing to flag
    assert any("births" in m for m in lint(upgraded))


def test_rebirth_at_donor_spawn_time_no_warning():
    donor = Genealogy(
        events=(
            birth("2013-04-07 08:44:13+00:00", capacity=7692288),
            spawn("2013-04-07 11:58:04+00:00", capacity=7692288),
        )
    )
    host = record_upgrade(
        Genealogy(events=(birth("2013-02-17 13:01:38+00:00"),)),
        donor,
        birth("2013-04-07 11:58:04+00:00", capacity=7692288),
    )
    assert lint(host) == []


# ---------------------------------------------------------------------------
# serialization layout


def test_serialize_empty():
    assert serialize(Genealogy()) == ""


def test_serialize_one_birth_layout():
    g = Genealogy(events=(birth("2013-02-17 13:01:38+00:00"),))
    assert serialize(g) == "i 2013-02-17 13:01:38+00:00 - fr_FR.UTF-8 - 4023296 -          1\n"


def test_serialize_batch_column_width():
    g = Genealogy(events=(birth("2013-02-17 13:01:38+00:00", batch=1234567890),))
    line = serialize(g).rstrip("\n")
    assert line.endswith("- 1234567890")
    g2 = Genealogy(events=(birth("2013-02-17 13:01:38+00:00", batch=42),))
    assert serialize(g2).rstrip("\n").endswith("-         42")


def test_serialize_donor_indent_and_inline_descriptor():
    donor = Genealogy(
        provenance=ProvenanceHeader(
            "Sage 5.8", datetime.date(2013, 4, 6), "fr_FR.UTF-8", "wheezy", "686-pae"
        ),
        events=(birth("2013-04-07 08:44:13+00:00", capacity=7692288),),
    )
    host = record_upgrade(
        Genealogy(events=(birth("2013-02-17 13:01:38+00:00"),)),
        donor,
        birth("2013-04-08 00:00:00+00:00", capacity=7692288),
    )
    lines = serialize(host).splitlines()
    assert lines[1] == "u p Sage 5.8 2013-04-06 fr_FR.UTF-8 - wheezy - 686-pae"
    assert lines[2].startswith("  i 2013-04-07")
    assert lines[3].startswith("i 2013-04-08")


def test_serialize_preserves_nonzero_utc_offset():
    g = Genealogy(events=(birth("2013-02-17 13:01:38+02:00"),))
    assert "13:01:38+02:00" in serialize(g)
    assert parse(serialize(g)) == g


# ---------------------------------------------------------------------------
# record operations


def test_record_birth_appends():
    g = record_birth(Genealogy(), birth("2013-02-17 13:01:38+00:00"))
    assert stats(g).birth_count == 1
    assert stats(g).spawn_count == 0


def test_record_birth_rejects_spawn():
    with pytest.raises(ValueError):
        record_birth(Genealogy(), spawn("2013-02-17 13:01:38+00:00"))


def test_record_spawn_rejects_birth():
    with pytest.raises(ValueError):
        record_spawn(Genealogy(), birth("2013-02-17 13:01:38+00:00"))


def test_record_spawn_block():
    """One birth plus seven spawns, the shape of the reference log's
    opening block."""
    g = Genealogy(events=(birth("2013-02-17 13:01:38+00:00"),))
    times = [
        "2013-02-17 13:15:19+00:00",
        "2013-02-17 13:31:36+00:00",
        "2013-02-17 14:40:22+00:00",
        "2013-02-19 15:56:46+00:00",
        "2013-02-19 16:19:28+00:00",
        "2013-02-19 16:39:30+00:00",
        "2013-02-19 16:47:17+00:00",
    ]
    for t in times:
        g = record_spawn(g, spawn(t))
    assert stats(g).birth_count == 1
    assert stats(g).spawn_count == 7
    assert own_spawn_count(g) == 7


def test_record_upgrade_top_level_entry_count():
    host = Genealogy(events=tuple(spawn(f"2013-03-0{d} 10:00:00+00:00") for d in range(1, 9)))
    donor = Genealogy(
        events=(
            birth("2013-04-01 10:00:00+00:00"),
            spawn("2013-04-02 10:00:00+00:00"),
            spawn("2013-04-03 10:00:00+00:00"),
        )
    )
    out = record_upgrade(host, donor, birth("2013-04-03 10:00:00+00:00"))
    assert len(out.events) == 10
    assert isinstance(out.events[8], UpgradeEvent)
    assert out.events[9].kind is EventKind.BIRTH


def test_record_upgrade_empty_donor_allowed_in_memory():
    out = record_upgrade(Genealogy(), Genealogy(), birth("2013-04-03 10:00:00+00:00"))
    assert stats(out).upgrade_count == 1
    assert stats(out).birth_count == 1
    assert out.events[0].donor.events == ()


def test_record_upgrade_embeds_by_value():
    donor = Genealogy(events=(birth("2013-04-01 10:00:00+00:00"),))
    host = record_upgrade(Genealogy(), donor, birth("2013-04-02 10:00:00+00:00"))
    donor_after = record_spawn(donor, spawn("2013-04-05 10:00:00+00:00"))
    assert len(host.events[0].donor.events) == 1
    assert len(donor_after.events) == 2


def test_record_upgrade_rejects_spawn_rebirth():
    with pytest.raises(ValueError):
        record_upgrade(Genealogy(), Genealogy(), spawn("2013-04-03 10:00:00+00:00"))


def test_child_genealogy_shape():
    parent = Genealogy(events=(birth("2013-02-17 13:01:38+00:00"),))
    parent = record_spawn(parent, spawn("2013-02-17 13:15:19+00:00"))
    before = parent.events
    child = child_genealogy(parent, birth("2013-02-17 13:15:19+00:00"))
    assert parent.events == before
    assert stats(child).birth_count == 2
    assert child.events[-1].kind is EventKind.BIRTH
    assert own_spawn_count(child) == 0


def test_child_of_empty_parent():
    child = child_genealogy(Genealogy(), birth("2013-02-17 13:01:38+00:00"))
    assert len(child.events) == 1


# ---------------------------------------------------------------------------
# value constraints


def test_event_requires_timezone():
    with pytest.raises(ValueError):
        GenealogyEvent(
            EventKind.BIRTH,
            datetime.datetime(2013, 2, 17, 13, 1, 38),
            "fr_FR.UTF-8",
            4023296,
        )


def test_event_rejects_subsecond():
    with pytest.raises(ValueError):
        GenealogyEvent(
            EventKind.BIRTH,
            datetime.datetime(2013, 2, 17, 13, 1, 38, 500, tzinfo=UTC),
            "fr_FR.UTF-8",
            4023296,
        )


def test_event_rejects_bad_counts():
    with pytest.raises(ValueError):
        birth("2013-02-17 13:01:38+00:00", capacity=0)
    with pytest.raises(ValueError):
        birth("2013-02-17 13:01:38+00:00", batch=0)


def test_header_descriptor_round_trip():
    head = ProvenanceHeader(
        "Sage 5.9 Debian wheezy Live 3.0.5-1",
        datetime.date(2013, 5, 9),
        "en_US.UTF-8",
        "wheezy",
        "686-pae",
    )
    assert ProvenanceHeader.from_descriptor(head.descriptor()) == head


def test_header_rejects_separator_in_label():
    with pytest.raises(ValueError):
        ProvenanceHeader(
            "Sage - 5.9", datetime.date(2013, 5, 9), "en_US.UTF-8", "wheezy", "686-pae"
        )


def test_header_rejects_edge_dashes():
    with pytest.raises(ValueError):
        ProvenanceHeader(
            "Sage -", datetime.date(2013, 5, 9), "en_US.UTF-8", "wheezy", "686-pae"
        )
    with pytest.raises(ValueError):
        GenealogyEvent(EventKind.BIRTH, ts("2013-02-17 13:01:38+00:00"), "-", 4023296)


def test_empty_record_stats():
    assert stats(Genealogy()) == LineageStats()


# ---------------------------------------------------------------------------
# property tests

_token = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._",
    min_size=1,
    max_size=10,
)
_label = st.lists(_token, min_size=1, max_size=3).map(" ".join)
_offset = st.integers(min_value=-14 * 60, max_value=14 * 60).map(
    lambda m: datetime.timezone(datetime.timedelta(minutes=m))
)
_timestamp = st.datetimes(
    min_value=datetime.datetime(1990, 1, 1),
    max_value=datetime.datetime(2100, 1, 1),
    timezones=_offset,
).map(lambda d: d.replace(microsecond=0))

_header = st.builds(
    ProvenanceHeader,
    label=_label,
    build_date=st.dates(
        min_value=datetime.date(1990, 1, 1), max_value=datetime.date(2100, 1, 1)
    ),
    locale=_token,
    suite=_label,
    arch=_label,
)

_event = st.builds(
    GenealogyEvent,
    kind=st.sampled_from([EventKind.BIRTH, EventKind.SPAWN]),
    timestamp=_timestamp,
    locale=_token,
    capacity=st.integers(min_value=1, max_value=10**8),
    batch_count=st.integers(min_value=1, max_value=10**6),
)


def _records(depth: int):
    if depth == 0:
        items = _event
    else:
        donor = _records(depth - 1).filter(
            lambda g: g.provenance is not None or g.events
        )
        upgrade = st.builds(
            UpgradeEvent,
            donor=donor,
            donor_has_provenance=st.just(None) | st.just(False),
        )
        items = _event | upgrade
    return st.builds(
        Genealogy,
        provenance=st.none() | _header,
        events=st.lists(items, max_size=6).map(tuple),
    )


_genealogies = _records(2)


def _parse_quiet(text):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GenealogyWarning)
        return parse(text)


@given(_genealogies)
def test_round_trip_property(g):
    assert _parse_quiet(serialize(g)) == g


@given(_genealogies)
def test_canonical_idempotence_property(g):
    canon = serialize(g)
    assert serialize(_parse_quiet(canon)) == canon


@given(_genealogies, _event)
def test_monotone_counts_property(g, ev):
    base = stats(g)
    if ev.kind is EventKind.BIRTH:
        grown = stats(record_birth(g, ev))
        assert grown.birth_count == base.birth_count + 1
        assert grown.spawn_count == base.spawn_count
    else:
        grown = stats(record_spawn(g, ev))
        assert grown.spawn_count == base.spawn_count + 1
        assert grown.birth_count == base.birth_count
    assert grown.upgrade_count == base.upgrade_count


@given(_genealogies, _genealogies, _event.filter(lambda e: e.kind is EventKind.BIRTH))
def test_upgrade_counts_property(host, donor, rebirth):
    base = stats(host)
    donor_stats = stats(donor)
    grown = stats(record_upgrade(host, donor, rebirth))
    assert grown.upgrade_count == base.upgrade_count + donor_stats.upgrade_count + 1
    assert grown.birth_count == base.birth_count + donor_stats.birth_count + 1
    assert grown.spawn_count == base.spawn_count + donor_stats.spawn_count


@given(_genealogies, _event.filter(lambda e: e.kind is EventKind.BIRTH))
def test_child_never_has_spawns_after_final_birth(parent, b):
    child = child_genealogy(parent, b)
    assert own_spawn_count(child) == 0
    assert child.events[-1] == b
    assert child.events[:-1] == parent.events
