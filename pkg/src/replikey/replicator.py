"""Clone and upgrade state machine over a virtual device bus.

The model mirrors the behaviour of a self-replicating live key: the
booted key refuses to act unless exactly two USB devices are present,
copies its whitelisted system files plus the shared directory onto the
target, never touches personal data, and appends the matching spawn,
birth, and upgrade events to the genealogies involved.

Everything here is an immutable snapshot; ``execute_plan`` returns a new
inventory rather than mutating the one it was given.
"""

from __future__ import annotations

import datetime
import enum
import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping

from . import genealogy as gen
from .units import MB, KIB, as_fraction

__all__ = [
    "Bus",
    "FileClass",
    "FileEntry",
    "ImageManifest",
    "KeyState",
    "VirtualDevice",
    "CloneMode",
    "ClonePlan",
    "ReplicationError",
    "RefusalNotTwoUsb",
    "RefusalTargetIsSource",
    "TargetNotBlank",
    "OverwriteNotConfirmed",
    "CapacityExceeded",
    "select_target",
    "classify_paths",
    "plan_clone",
    "plan_upgrade",
    "execute_plan",
    "share_merge",
    "inventory_to_json",
    "inventory_from_json",
]

DEFAULT_UPGRADE_RATIO = Fraction(4, 5)


class ReplicationError(Exception):
    """Base for refusals and failures of the clone/upgrade machinery.

    Each subclass carries a stable ``rule`` name suitable for terse
    diagnostics.
    """

    rule = "replication"


class RefusalNotTwoUsb(ReplicationError):
    """The strict device test: act only when exactly two USB devices are
    attached, otherwise a misdetected device (an internal card reader
    showing up as USB, say) could be overwritten."""

    rule = "not-two-usb"


class RefusalTargetIsSource(ReplicationError):
    rule = "target-is-source"


class TargetNotBlank(ReplicationError):
    rule = "target-not-blank"


class OverwriteNotConfirmed(ReplicationError):
    """The target holds non-key data and the plan was not flagged to
    overwrite it."""

    rule = "overwrite-not-confirmed"


class CapacityExceeded(ReplicationError):
    rule = "capacity-exceeded"


class Bus(enum.Enum):
    USB = "usb"
    INTERNAL = "internal"


class FileClass(enum.Enum):
    SYSTEM = "system"
    SHARE = "share"
    PERSONAL = "personal"


class CloneMode(enum.Enum):
    FRESH = "fresh"
    UPGRADE = "upgrade"


@dataclass(frozen=True)
class FileEntry:
    """One file on a key: its size, its classification, and an abstract
    content token standing in for the actual bytes (equal tokens mean
    equal content)."""

    size_bytes: int
    file_class: FileClass
    content: str = ""

    def __post_init__(self):
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be >= 0")
        if not isinstance(self.file_class, FileClass):
            raise ValueError(f"file_class must be a FileClass, got {self.file_class!r}")


@dataclass(frozen=True)
class ImageManifest:
    """Recipe for a built key image: which paths make up the system, where
    shared files live, how large the compressed payload is, and which
    file the boot sector loads."""

    version: gen.ProvenanceHeader
    whitelist: frozenset
    image_bytes: int
    share_prefix: str = "/share/"
    boot_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "whitelist", frozenset(self.whitelist))
        if not self.whitelist:
            raise ValueError("whitelist must be non-empty")
        if self.image_bytes <= 0:
            raise ValueError("image_bytes must be positive")
        if not self.share_prefix.endswith("/"):
            raise ValueError("share_prefix must end with '/'")
        for path in self.whitelist:
            if path.startswith(self.share_prefix):
                raise ValueError(
                    f"whitelist path {path!r} lies inside share prefix {self.share_prefix!r}"
                )
        if self.boot_path is None:
            object.__setattr__(self, "boot_path", min(self.whitelist))
        elif self.boot_path not in self.whitelist:
            raise ValueError("boot_path must be a whitelisted path")


def _freeze_files(files) -> tuple:
    """Normalize a path → FileEntry mapping into a sorted tuple of pairs."""
    if isinstance(files, tuple):
        items = files
    else:
        items = tuple(sorted(files.items()))
    return items


@dataclass(frozen=True)
class KeyState:
    """Snapshot of one live key: its image version, classified files,
    genealogy, capacity, runtime locale, boot pointer, and whether its
    system has been tampered with."""

    version: gen.ProvenanceHeader
    files: tuple  # sorted ((path, FileEntry), ...)
    image_bytes: int
    genealogy: gen.Genealogy
    capacity_kib: int
    boot_path: str
    locale: str | None = None
    share_prefix: str = "/share/"
    compromised: bool = False

    def __post_init__(self):
        object.__setattr__(self, "files", _freeze_files(self.files))
        if self.locale is None:
            object.__setattr__(self, "locale", self.version.locale)
        if self.capacity_kib <= 0:
            raise ValueError("capacity_kib must be positive")
        if self.image_bytes <= 0:
            raise ValueError("image_bytes must be positive")
        seen = set()
        total = 0
        for path, entry in self.files:
            if not isinstance(entry, FileEntry):
                raise ValueError(f"file entry for {path!r} must be a FileEntry")
            if path in seen:
                raise ValueError(f"duplicate path {path!r}")
            seen.add(path)
            total += entry.size_bytes
            if path.startswith(self.share_prefix) and entry.file_class is not FileClass.SHARE:
                raise ValueError(
                    f"path {path!r} under {self.share_prefix!r} must be classified Share"
                )
        if total > self.capacity_kib * KIB:
            raise CapacityExceeded(
                f"files total {total} bytes exceed capacity "
                f"{self.capacity_kib * KIB} bytes"
            )
        if self.boot_path not in seen:
            raise ValueError(f"boot_path {self.boot_path!r} is not a file on the key")

    # -- convenience views ---------------------------------------------

    def file_map(self) -> dict:
        return dict(self.files)

    def paths_of(self, file_class: FileClass) -> frozenset:
        return frozenset(p for p, e in self.files if e.file_class is file_class)

    def used_bytes(self) -> int:
        return sum(e.size_bytes for _, e in self.files)

    @classmethod
    def from_manifest(
        cls,
        manifest: ImageManifest,
        capacity_kib: int,
        born_at: datetime.datetime,
        locale: str | None = None,
    ) -> "KeyState":
        """A master key freshly written from a built image: system files
        carved out of image_bytes, a provenance header, and a single
        birth event."""
        paths = sorted(manifest.whitelist)
        share, remainder = divmod(manifest.image_bytes, len(paths))
        files = {}
        for i, path in enumerate(paths):
            size = share + (remainder if i == 0 else 0)
            files[path] = FileEntry(
                size_bytes=size,
                file_class=FileClass.SYSTEM,
                content=f"{manifest.version.descriptor()}::{path}",
            )
        locale = locale or manifest.version.locale
        birth = gen.GenealogyEvent(
            gen.EventKind.BIRTH, born_at, locale, capacity_kib, 1
        )
        return cls(
            version=manifest.version,
            files=files,
            image_bytes=manifest.image_bytes,
            genealogy=gen.Genealogy(provenance=manifest.version, events=(birth,)),
            capacity_kib=capacity_kib,
            boot_path=manifest.boot_path,
            locale=locale,
            share_prefix=manifest.share_prefix,
        )

    def with_file(self, path: str, entry: FileEntry) -> "KeyState":
        files = self.file_map()
        files[path] = entry
        return replace(self, files=_freeze_files(files))


@dataclass(frozen=True)
class VirtualDevice:
    """A block device on the simulated bus.  ``contents`` is the key
    living on it, if any; ``foreign_data`` marks non-key data that would
    be destroyed by a clone."""

    id: str
    bus: Bus
    capacity_kib: int
    contents: KeyState | None = None
    is_boot_source: bool = False
    foreign_data: bool = False

    def __post_init__(self):
        if not self.id:
            raise ValueError("device id must be non-empty")
        if self.capacity_kib <= 0:
            raise ValueError("capacity_kib must be positive")
        if self.contents is not None:
            if self.foreign_data:
                raise ValueError("a device holding a key cannot also hold foreign data")
            if self.contents.capacity_kib != self.capacity_kib:
                raise ValueError(
                    "key capacity does not match its device "
                    f"({self.contents.capacity_kib} != {self.capacity_kib})"
                )


def _check_inventory(inventory) -> list:
    devices = list(inventory)
    if not devices:
        raise ValueError("inventory is empty")
    ids = [d.id for d in devices]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate device ids in inventory")
    boots = [d for d in devices if d.is_boot_source]
    if len(boots) != 1:
        raise ValueError(f"inventory must have exactly one boot source, found {len(boots)}")
    return devices


def _device(inventory, device_id: str) -> VirtualDevice:
    for d in inventory:
        if d.id == device_id:
            return d
    raise ReplicationError(f"no device {device_id!r} in inventory")


@dataclass(frozen=True)
class ClonePlan:
    """A computed clone or upgrade: what gets copied where, how many
    bytes move, and how long the transfer takes at the planned
    bandwidth.  ``duration_s`` is exact (a rational)."""

    mode: CloneMode
    source: str
    target: str
    copy_set: frozenset
    preserve_set: frozenset
    bytes_total: int
    duration_s: Fraction
    allow_overwrite: bool = False

    def __post_init__(self):
        object.__setattr__(self, "copy_set", frozenset(self.copy_set))
        object.__setattr__(self, "preserve_set", frozenset(self.preserve_set))
        if self.bytes_total < 0:
            raise ValueError("bytes_total must be >= 0")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")


# ---------------------------------------------------------------------------
# operations


def select_target(inventory) -> str:
    """The strict safety gate: with exactly two USB devices attached, one
    of them the booted key, return the other one's id.

    Raises RefusalNotTwoUsb when the USB count differs from two, and
    RefusalTargetIsSource when the booted system is not on either USB
    device (no way to tell source from target)."""
    devices = _check_inventory(inventory)
    usb = [d for d in devices if d.bus is Bus.USB]
    if len(usb) != 2:
        raise RefusalNotTwoUsb(
            f"need exactly 2 USB devices, found {len(usb)}"
        )
    boot = next(d for d in devices if d.is_boot_source)
    if boot.bus is not Bus.USB:
        raise RefusalTargetIsSource(
            "booted system is not on a USB key; source and target are indistinguishable"
        )
    target = usb[0] if usb[1].id == boot.id else usb[1]
    if target.id == boot.id:
        raise RefusalTargetIsSource("both USB devices claim to be the boot source")
    return target.id


def classify_paths(files: Mapping[str, int], manifest: ImageManifest) -> dict:
    """Classify bare paths against a manifest: whitelisted → System,
    under the share prefix → Share, everything else → Personal."""
    out = {}
    for path in files:
        if path in manifest.whitelist:
            out[path] = FileClass.SYSTEM
        elif path.startswith(manifest.share_prefix):
            out[path] = FileClass.SHARE
        else:
            out[path] = FileClass.PERSONAL
    return out


def _copy_entries(source: KeyState) -> dict:
    return {
        path: entry
        for path, entry in source.files
        if entry.file_class in (FileClass.SYSTEM, FileClass.SHARE)
    }


def plan_clone(
    source: VirtualDevice,
    target: VirtualDevice,
    bandwidth_mb_s,
    allow_overwrite: bool = False,
) -> ClonePlan:
    """Plan a fresh clone: copy the source key's system and share files
    onto blank media.

    The target must hold no key (use plan_upgrade for that) and holding
    foreign data requires allow_overwrite.  Duration is bytes divided by
    the decimal-MB bandwidth, kept exact."""
    bandwidth = as_fraction(bandwidth_mb_s)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if source.contents is None:
        raise ReplicationError(f"source device {source.id!r} holds no key")
    if target.id == source.id:
        raise RefusalTargetIsSource(f"target {target.id!r} is the source device")
    if target.contents is not None:
        raise TargetNotBlank(
            f"device {target.id!r} already holds a key; plan an upgrade instead"
        )
    if target.foreign_data and not allow_overwrite:
        raise OverwriteNotConfirmed(
            f"device {target.id!r} holds non-key data; confirm overwrite explicitly"
        )
    entries = _copy_entries(source.contents)
    bytes_total = sum(e.size_bytes for e in entries.values())
    if bytes_total > target.capacity_kib * KIB:
        raise CapacityExceeded(
            f"clone needs {bytes_total} bytes, target holds {target.capacity_kib * KIB}"
        )
    return ClonePlan(
        mode=CloneMode.FRESH,
        source=source.id,
        target=target.id,
        copy_set=frozenset(entries),
        preserve_set=frozenset(),
        bytes_total=bytes_total,
        duration_s=Fraction(bytes_total) / (bandwidth * MB),
        allow_overwrite=allow_overwrite,
    )


def plan_upgrade(
    source: VirtualDevice,
    target: VirtualDevice,
    bandwidth_mb_s,
    upgrade_ratio=DEFAULT_UPGRADE_RATIO,
) -> ClonePlan:
    """Plan an upgrade: the source key rewrites the target key's system
    and merges its share directory while every personal file on the
    target stays in place.

    Transfer volume is upgrade_ratio × the source image size plus the
    source's share files.  Capacity must cover both the staging peak
    (current contents plus the incoming transfer) and the final state."""
    bandwidth = as_fraction(bandwidth_mb_s)
    ratio = as_fraction(upgrade_ratio)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if not 0 < ratio <= 1:
        raise ValueError("upgrade_ratio must be in (0, 1]")
    if source.contents is None:
        raise ReplicationError(f"source device {source.id!r} holds no key")
    if target.contents is None:
        raise ReplicationError(f"target device {target.id!r} holds no key to upgrade")
    if target.id == source.id:
        raise RefusalTargetIsSource(f"target {target.id!r} is the source device")

    src_key = source.contents
    tgt_key = target.contents
    entries = _copy_entries(src_key)
    share_bytes = sum(
        e.size_bytes for e in entries.values() if e.file_class is FileClass.SHARE
    )
    transfer = math.ceil(ratio * src_key.image_bytes + share_bytes)
    capacity = target.capacity_kib * KIB

    staging_peak = tgt_key.used_bytes() + transfer
    if staging_peak > capacity:
        raise CapacityExceeded(
            f"upgrade staging needs {staging_peak} bytes on a {capacity}-byte key"
        )
    final_files = dict(_upgraded_files(src_key, tgt_key))
    final_bytes = sum(e.size_bytes for e in final_files.values())
    if final_bytes > capacity:
        raise CapacityExceeded(
            f"upgraded key would hold {final_bytes} bytes on a {capacity}-byte key"
        )
    return ClonePlan(
        mode=CloneMode.UPGRADE,
        source=source.id,
        target=target.id,
        copy_set=frozenset(entries),
        preserve_set=tgt_key.paths_of(FileClass.PERSONAL),
        bytes_total=transfer,
        duration_s=Fraction(transfer) / (bandwidth * MB),
        allow_overwrite=False,
    )


def share_merge(source_share: Mapping, target_share: Mapping) -> dict:
    """Union of two share directories; on a path collision the source
    (booted) key's copy wins."""
    merged = dict(target_share)
    merged.update(source_share)
    return merged


def _upgraded_files(src_key: KeyState, tgt_key: KeyState) -> dict:
    """File set of the target after an upgrade: source system, merged
    share, target personal."""
    out = {
        path: entry
        for path, entry in src_key.files
        if entry.file_class is FileClass.SYSTEM
    }
    src_share = {
        p: e for p, e in src_key.files if e.file_class is FileClass.SHARE
    }
    tgt_share = {
        p: e for p, e in tgt_key.files if e.file_class is FileClass.SHARE
    }
    out.update(share_merge(src_share, tgt_share))
    for path, entry in tgt_key.files:
        if entry.file_class is FileClass.PERSONAL:
            out[path] = entry
    return _with_boot_file(src_key, out)


def _with_boot_file(src_key: KeyState, entries: dict) -> dict:
    # a shadow-booted source points outside its system set; the write
    # process carries that boot target along, keeping the tamper visible
    # on the new key
    if src_key.boot_path not in entries:
        entries = dict(entries)
        entries[src_key.boot_path] = dict(src_key.files)[src_key.boot_path]
    return entries


def _spawn_event(key: KeyState, now: datetime.datetime) -> gen.GenealogyEvent:
    return gen.GenealogyEvent(gen.EventKind.SPAWN, now, key.locale, key.capacity_kib, 1)


def execute_plan(plan: ClonePlan, inventory, now: datetime.datetime):
    """Apply a plan to an inventory, returning the updated inventory.

    Revalidates against current state first, so a stale plan fails
    before anything changes; the input inventory is never mutated."""
    devices = _check_inventory(inventory)
    if plan.source == plan.target:
        raise RefusalTargetIsSource(f"plan targets its own source {plan.source!r}")
    source_dev = _device(devices, plan.source)
    target_dev = _device(devices, plan.target)
    if source_dev.contents is None:
        raise ReplicationError(f"source device {plan.source!r} holds no key")
    src_key = source_dev.contents
    src_files = dict(src_key.files)

    missing = [p for p in plan.copy_set if p not in src_files]
    if missing:
        raise ReplicationError(
            f"plan is stale: source no longer has {sorted(missing)[0]!r}"
        )

    if plan.mode is CloneMode.FRESH:
        if target_dev.contents is not None:
            raise TargetNotBlank(
                f"device {plan.target!r} already holds a key; plan an upgrade instead"
            )
        if target_dev.foreign_data and not plan.allow_overwrite:
            raise OverwriteNotConfirmed(
                f"device {plan.target!r} holds non-key data; confirm overwrite explicitly"
            )
        entries = _with_boot_file(src_key, {p: src_files[p] for p in plan.copy_set})
        total = sum(e.size_bytes for e in entries.values())
        if total > target_dev.capacity_kib * KIB:
            raise CapacityExceeded(
                f"clone needs {total} bytes, target holds {target_dev.capacity_kib * KIB}"
            )
        src_after = replace(
            src_key,
            genealogy=gen.record_spawn(src_key.genealogy, _spawn_event(src_key, now)),
        )
        birth = gen.GenealogyEvent(
            gen.EventKind.BIRTH, now, src_key.locale, target_dev.capacity_kib, 1
        )
        child = KeyState(
            version=src_key.version,
            files=entries,
            image_bytes=src_key.image_bytes,
            genealogy=gen.child_genealogy(src_after.genealogy, birth),
            capacity_kib=target_dev.capacity_kib,
            boot_path=src_key.boot_path,
            locale=src_key.locale,
            share_prefix=src_key.share_prefix,
            compromised=src_key.compromised,
        )
        new_target = replace(target_dev, contents=child, foreign_data=False)
    else:
        if target_dev.contents is None:
            raise ReplicationError(f"target device {plan.target!r} holds no key to upgrade")
        tgt_key = target_dev.contents
        final_files = _upgraded_files(src_key, tgt_key)
        final_bytes = sum(e.size_bytes for e in final_files.values())
        if tgt_key.used_bytes() + plan.bytes_total > target_dev.capacity_kib * KIB:
            raise CapacityExceeded("upgrade staging no longer fits the target")
        if final_bytes > target_dev.capacity_kib * KIB:
            raise CapacityExceeded("upgraded key no longer fits the target")
        src_after = replace(
            src_key,
            genealogy=gen.record_spawn(src_key.genealogy, _spawn_event(src_key, now)),
        )
        rebirth = gen.GenealogyEvent(
            gen.EventKind.BIRTH, now, src_key.locale, target_dev.capacity_kib, 1
        )
        upgraded = KeyState(
            version=src_key.version,
            files=final_files,
            image_bytes=src_key.image_bytes,
            genealogy=gen.record_upgrade(tgt_key.genealogy, src_after.genealogy, rebirth),
            capacity_kib=target_dev.capacity_kib,
            boot_path=src_key.boot_path,
            locale=src_key.locale,
            share_prefix=src_key.share_prefix,
            compromised=src_key.compromised,
        )
        new_target = replace(target_dev, contents=upgraded)

    new_source = replace(source_dev, contents=src_after)
    return tuple(
        new_source if d.id == plan.source else new_target if d.id == plan.target else d
        for d in devices
    )


# ---------------------------------------------------------------------------
# JSON load/dump


def _header_to_json(h: gen.ProvenanceHeader) -> str:
    return h.descriptor()


def _key_to_json(key: KeyState) -> dict:
    return {
        "version": _header_to_json(key.version),
        "locale": key.locale,
        "image_bytes": key.image_bytes,
        "capacity_kib": key.capacity_kib,
        "boot_path": key.boot_path,
        "share_prefix": key.share_prefix,
        "compromised": key.compromised,
        "files": {
            path: {
                "size": entry.size_bytes,
                "class": entry.file_class.value,
                "content": entry.content,
            }
            for path, entry in key.files
        },
        "genealogy": gen.serialize(key.genealogy),
    }


def _key_from_json(doc: dict) -> KeyState:
    files = {
        path: FileEntry(
            size_bytes=int(fields["size"]),
            file_class=FileClass(fields["class"]),
            content=fields.get("content", ""),
        )
        for path, fields in doc["files"].items()
    }
    return KeyState(
        version=gen.ProvenanceHeader.from_descriptor(doc["version"]),
        files=files,
        image_bytes=int(doc["image_bytes"]),
        genealogy=gen.parse(doc["genealogy"]),
        capacity_kib=int(doc["capacity_kib"]),
        boot_path=doc["boot_path"],
        locale=doc.get("locale"),
        share_prefix=doc.get("share_prefix", "/share/"),
        compromised=bool(doc.get("compromised", False)),
    )


def inventory_to_json(inventory) -> str:
    """Serialize an inventory as a deterministic JSON document."""
    doc = {
        "devices": [
            {
                "id": d.id,
                "bus": d.bus.value,
                "capacity_kib": d.capacity_kib,
                "boot_source": d.is_boot_source,
                "foreign_data": d.foreign_data,
                "key": None if d.contents is None else _key_to_json(d.contents),
            }
            for d in inventory
        ]
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def inventory_from_json(text: str):
    """Parse an inventory document produced by inventory_to_json (or
    written by hand to the same schema)."""
    doc = json.loads(text)
    devices = []
    for item in doc["devices"]:
        key = item.get("key")
        devices.append(
            VirtualDevice(
                id=item["id"],
                bus=Bus(item["bus"]),
                capacity_kib=int(item["capacity_kib"]),
                contents=None if key is None else _key_from_json(key),
                is_boot_source=bool(item.get("boot_source", False)),
                foreign_data=bool(item.get("foreign_data", False)),
            )
        )
    return tuple(devices)
