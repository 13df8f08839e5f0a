"""One key's life: cloned, loaded with personal data, upgraded.

Walks the replication machinery end to end on virtual devices: the
safety gate picks the only legal target, a fresh clone is planned and
executed, the new owner accumulates personal files and a /share folder,
and a newer master later upgrades the key without touching any of that.
Then a fleet-wide redeployment shows the same upgrade spreading through
sixty already-seeded keys.

Run: python3 demos/upgrade_cycle.py
"""

import datetime
from fractions import Fraction

from replikey import (
    Bus,
    FileClass,
    FileEntry,
    ImageManifest,
    KeyState,
    ProvenanceHeader,
    SimConfig,
    VirtualDevice,
    execute_plan,
    plan_clone,
    plan_upgrade,
    run_redeployment,
    select_target,
    serialize,
)

UTC = datetime.timezone.utc
CAPACITY_KIB = 7_812_500  # an 8 GB stick


def device(dev_id, key=None, boot=False, foreign=False):
    return VirtualDevice(
        id=dev_id,
        bus=Bus.USB,
        capacity_kib=CAPACITY_KIB,
        contents=key,
        is_boot_source=boot,
        foreign_data=foreign,
    )


def main():
    v1 = ProvenanceHeader(
        "Pocket Live 1.0", datetime.date(2013, 1, 15), "en_US.UTF-8", "stable", "amd64"
    )
    image = ImageManifest(
        version=v1,
        whitelist=frozenset({"/live/filesystem.squashfs", "/live/vmlinuz"}),
        image_bytes=2_700_000_000,
    )
    born = datetime.datetime(2013, 1, 20, 10, 0, tzinfo=UTC)
    master = KeyState.from_manifest(image, CAPACITY_KIB, born)

    laptop = (
        VirtualDevice(id="sda", bus=Bus.INTERNAL, capacity_kib=488_281_250,
                      foreign_data=True),
        device("sdb", master, boot=True),
        device("sdc"),  # the friend's blank stick
    )
    target = select_target(laptop)
    print(f"gate: exactly two USB sticks, booted one is sdb, target is {target}")

    plan = plan_clone(laptop[1], laptop[2], bandwidth_mb_s=Fraction("4.5"))
    print(f"fresh clone: {plan.bytes_total} bytes, "
          f"{float(plan.duration_s):.0f} s at 4.5 MB/s")
    t_clone = datetime.datetime(2013, 1, 25, 18, 30, tzinfo=UTC)
    laptop = execute_plan(plan, laptop, t_clone)
    friend = laptop[2].contents

    # the friend uses the key for a while
    friend = friend.with_file(
        "/home/user/thesis.tex", FileEntry(80_000, FileClass.PERSONAL, "draft 3")
    )
    friend = friend.with_file(
        "/share/howto.pdf", FileEntry(400_000, FileClass.SHARE, "v1 guide")
    )

    # months later: a new release on the master, same friend's key
    v2 = ProvenanceHeader(
        "Pocket Live 2.0", datetime.date(2013, 6, 1), "en_US.UTF-8", "stable", "amd64"
    )
    master2 = KeyState.from_manifest(
        ImageManifest(
            version=v2,
            whitelist=image.whitelist,
            image_bytes=2_800_000_000,
        ),
        CAPACITY_KIB,
        datetime.datetime(2013, 6, 2, 9, 0, tzinfo=UTC),
    )
    pair = (device("sdb", master2, boot=True), device("sdc", friend))
    up = plan_upgrade(pair[0], pair[1], bandwidth_mb_s=Fraction("4.5"))
    print(f"upgrade: rewrites {up.bytes_total} bytes "
          f"({float(up.duration_s):.0f} s), preserves {sorted(up.preserve_set)}")
    t_up = datetime.datetime(2013, 6, 10, 20, 0, tzinfo=UTC)
    pair = execute_plan(up, pair, t_up)
    upgraded = pair[1].contents

    kept = upgraded.file_map()["/home/user/thesis.tex"]
    print(f"personal file untouched: {kept.content!r}")
    print(f"share folder survived too: "
          f"{sorted(upgraded.paths_of(FileClass.SHARE))}")
    print(f"now running: {upgraded.version.label}")
    print()
    print("the friend's key remembers everything:")
    print()
    print(serialize(upgraded.genealogy))

    print("fleet view: the same release pushed through 60 seeded keys")
    config = SimConfig(
        n_participants=60,
        releases=((0, v2),),
    )
    result = run_redeployment(config)
    print(f"  upgrade rounds:  {result.rounds}")
    print(f"  makespan:        {float(result.makespan_s):.0f} s")
    print(f"  bytes rewritten: {result.upgrade_bytes}")
    coverage = ", ".join(f"{v.split(' 2013')[0]}: {c}" for v, c in
                         sorted(result.version_coverage.items()))
    print(f"  final coverage:  {coverage}")


if __name__ == "__main__":
    main()
