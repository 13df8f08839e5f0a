"""A tour of the genealogy log.

Builds a small family of keys by hand: a master is born, spawns two
children in a workshop, and one child later comes back and upgrades the
master. Prints the resulting log, reads it back, and shows what the
statistics see.

Run: python3 demos/lineage_tour.py
"""

import datetime

from replikey import (
    EventKind,
    Genealogy,
    GenealogyEvent,
    ProvenanceHeader,
    child_genealogy,
    own_spawn_count,
    parse,
    record_spawn,
    record_upgrade,
    serialize,
    stats,
)

UTC = datetime.timezone.utc


def ts(day, hour, minute, second=0):
    return datetime.datetime(2013, 3, day, hour, minute, second, tzinfo=UTC)


def ev(kind, when, locale="en_US.UTF-8", capacity=7_812_500):
    return GenealogyEvent(kind, when, locale, capacity)


def main():
    header = ProvenanceHeader(
        label="Workshop Live 0.9",
        build_date=datetime.date(2013, 2, 28),
        locale="en_US.UTF-8",
        suite="testing",
        arch="amd64",
    )

    # the master key gets written from the built image
    master = Genealogy(
        provenance=header,
        events=(ev(EventKind.BIRTH, ts(1, 9, 0)),),
    )

    # at the workshop it clones two participants, one key each
    master = record_spawn(master, ev(EventKind.SPAWN, ts(2, 14, 0)))
    alice = child_genealogy(master, ev(EventKind.BIRTH, ts(2, 14, 0)))
    master = record_spawn(master, ev(EventKind.SPAWN, ts(2, 14, 12)))
    bob = child_genealogy(master, ev(EventKind.BIRTH, ts(2, 14, 12)))

    # alice keeps spreading on her own
    alice = record_spawn(alice, ev(EventKind.SPAWN, ts(5, 19, 30)))

    # weeks later alice's key, now ahead, upgrades the master in place;
    # the master keeps its history and embeds hers
    master = record_upgrade(
        master,
        donor=record_spawn(alice, ev(EventKind.SPAWN, ts(20, 11, 45))),
        rebirth=ev(EventKind.BIRTH, ts(20, 11, 45)),
    )

    print("master key log after the upgrade:")
    print()
    text = serialize(master)
    print(text)

    back = parse(text)
    assert back == master, "the text form is lossless"
    assert serialize(back) == text, "and canonical"

    s = stats(master)
    print(f"births recorded (host and embedded): {s.birth_count}")
    print(f"spawns recorded:                     {s.spawn_count}")
    print(f"upgrades:                            {s.upgrade_count}")
    print(f"embedding depth:                     {s.max_embedding_depth}")
    print(f"spawns by the current incarnation:   {own_spawn_count(master)}")
    print()
    print("bob's log never left the workshop:")
    print()
    print(serialize(bob))


if __name__ == "__main__":
    main()
