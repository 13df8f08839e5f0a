"""Attacker versus checker.

A key cannot test its own integrity, so owners check each other's keys
against a published digest manifest. This script plays both sides: it
tampers with a key the two ways the model knows (altering a system file,
and pointing the boot sector at a hidden system), shows what each check
sees, then simulates a population under the three meeting protocols to
compare how far an infection gets.

Run: python3 demos/integrity_game.py
"""

import datetime
import random

from replikey import (
    ImageManifest,
    KeyState,
    Protocol,
    ProvenanceHeader,
    TamperAction,
    TamperKind,
    TrustSimConfig,
    build_manifest,
    manifest_to_text,
    run_trust_sim,
    tamper,
    verify,
)

UTC = datetime.timezone.utc


def main():
    version = ProvenanceHeader(
        "Pocket Live 1.0", datetime.date(2013, 1, 15), "en_US.UTF-8", "stable", "amd64"
    )
    image = ImageManifest(
        version=version,
        whitelist=frozenset(
            {"/live/filesystem.squashfs", "/live/vmlinuz", "/boot/grub.cfg"}
        ),
        image_bytes=2_700_000_000,
    )
    born = datetime.datetime(2013, 1, 20, 10, 0, tzinfo=UTC)
    key = KeyState.from_manifest(image, 7_812_500, born)
    mine = KeyState.from_manifest(image, 7_812_500, born)
    reference = build_manifest(key)

    print("the published manifest:")
    print()
    print(manifest_to_text(reference))

    print("my clean key checks yours:")
    print(f"  {verify(mine, key, reference).outcome.value}")
    print()

    altered = tamper(key, TamperAction(TamperKind.MODIFY_FILE, "/live/vmlinuz"))
    v = verify(mine, altered, reference)
    print("after someone swaps the kernel:")
    print(f"  {v.outcome.value} at {v.offending_path}")

    shadowed = tamper(key, TamperAction(TamperKind.SHADOW_BOOT, "/.hidden/os"))
    v = verify(mine, shadowed, reference)
    print("after a stealthier attack that leaves every listed file alone")
    print("and only redirects the boot sector:")
    print(f"  {v.outcome.value} at {v.offending_path}")
    print()

    print("but checks run by a tampered key lie:")
    v = verify(altered, shadowed, reference)
    print(f"  tampered key checking a tampered key: {v.outcome.value}")
    print()

    print("population of 64, four tampered keys claiming a newer version,")
    print("1500 random encounters under each protocol:")
    print()
    header = ("protocol", "infected at end", "caught", "missed")
    rows = [header]
    for protocol in Protocol:
        result = run_trust_sim(
            TrustSimConfig(
                population=64,
                tampered_initial=4,
                meetings=1500,
                protocol=protocol,
                rng_seed=42,
            )
        )
        rows.append(
            (
                protocol.value,
                result.infected_over_time[-1],
                result.detections,
                result.false_negatives,
            )
        )
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(header))]
    for row in rows:
        print("  " + "  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    print()
    print("booting whichever key is newest hands the attacker the room;")
    print("drawing lots catches half the attempts before any write; the")
    print("spare-key habit catches every bad upgrade after the fact.")


if __name__ == "__main__":
    main()
