"""Cross-verification of key contents.

A key cannot vouch for itself: whoever tampered with it controls every
checking tool it carries.  The remedy modeled here is a second party. A
reference manifest (digests of the system files plus the boot pointer)
is published out of band, another key boots and compares the subject
against that manifest, and a draw or a spare key decides who gets to be
the checker.

The module provides the manifest type and its text form, two tamper
models (altering a listed file, and redirecting the boot sector to an
unlisted one), the pairwise verification step, three meeting protocols,
and a seeded simulation that measures how far an infection spreads and
how often it gets caught under each protocol.

All functions are pure; keys are immutable snapshots and every update
returns a new one.
"""

import datetime
import enum
import hashlib
import json
import random
from dataclasses import dataclass, replace

from . import genealogy as gen
from .replicator import (
    FileClass,
    FileEntry,
    ImageManifest,
    KeyState,
    _upgraded_files,
)

__all__ = [
    "IntegrityError",
    "TamperError",
    "ManifestParseError",
    "IntegrityManifest",
    "TamperKind",
    "TamperAction",
    "Outcome",
    "Verdict",
    "Protocol",
    "MeetingResult",
    "TrustSimConfig",
    "TrustSimResult",
    "content_digest",
    "build_manifest",
    "expected_manifest",
    "manifest_to_text",
    "manifest_from_text",
    "tamper",
    "check_against",
    "verify",
    "meeting",
    "run_trust_sim",
    "trust_sim_result_to_json",
]


class IntegrityError(Exception):
    pass


class TamperError(IntegrityError):
    """The tamper action's path does not fit its kind."""


class ManifestParseError(IntegrityError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


def content_digest(content: str) -> str:
    """Hex digest of a file's content token."""
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


_HEX = set("0123456789abcdef")


@dataclass(frozen=True)
class IntegrityManifest:
    """Digest list for the system files of one image, plus the path the
    boot sector is expected to load.

    ``version`` is carried when the manifest was built from a key and is
    None when read back from text; verification never consults it, the
    digests themselves pin the content.
    """

    digests: tuple
    boot_pointer: str
    version: gen.ProvenanceHeader | None = None

    def __post_init__(self):
        items = tuple(sorted(dict(self.digests).items()))
        if not items:
            raise ValueError("manifest lists no files")
        if len(items) != len(tuple(self.digests)):
            raise ValueError("duplicate path in manifest")
        for path, digest in items:
            if len(digest) != 64 or not set(digest) <= _HEX:
                raise ValueError(f"bad digest for {path!r}")
        object.__setattr__(self, "digests", items)
        if self.boot_pointer not in dict(items):
            raise ValueError(
                f"boot pointer {self.boot_pointer!r} is not a listed file"
            )

    def digest_map(self) -> dict:
        return dict(self.digests)

    def paths(self) -> tuple:
        return tuple(p for p, _ in self.digests)


def build_manifest(key: KeyState) -> IntegrityManifest:
    """Digest the key's system files. Personal and share files never
    appear; they differ from key to key by design."""
    digests = {
        path: content_digest(entry.content)
        for path, entry in key.files
        if entry.file_class is FileClass.SYSTEM
    }
    if not digests:
        raise ValueError("key carries no system files to digest")
    return IntegrityManifest(
        digests=tuple(digests.items()),
        boot_pointer=key.boot_path,
        version=key.version,
    )


def expected_manifest(
    version: gen.ProvenanceHeader, system_paths, boot_path: str | None = None
) -> IntegrityManifest:
    """The manifest a cleanly built image of ``version`` would publish
    for the given system paths.

    Stands in for fetching the publisher's digest list when only the
    claimed version is known. A fabricated release built to match its
    own claimed descriptor passes this reconstruction; pass a manifest
    obtained out of band instead when that matters.
    """
    paths = sorted(system_paths)
    if not paths:
        raise ValueError("no system paths given")
    digests = {
        p: content_digest(f"{version.descriptor()}::{p}") for p in paths
    }
    return IntegrityManifest(
        digests=tuple(digests.items()),
        boot_pointer=boot_path if boot_path is not None else paths[0],
        version=version,
    )


# ---------------------------------------------------------------------------
# text form


def manifest_to_text(manifest: IntegrityManifest) -> str:
    lines = [f"{digest}  {path}" for path, digest in manifest.digests]
    lines.append(f"boot={manifest.boot_pointer}")
    return "\n".join(lines) + "\n"


def manifest_from_text(text: str) -> IntegrityManifest:
    """Parse the text form back. The version is not part of the text
    format, so it comes back as None."""
    digests = []
    boot = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise ManifestParseError(lineno, "blank line")
        if boot is not None:
            raise ManifestParseError(lineno, "content after the boot line")
        if line.startswith("boot="):
            boot = line[len("boot="):]
            if not boot:
                raise ManifestParseError(lineno, "empty boot pointer")
            continue
        if len(line) < 67 or line[64:66] != "  ":
            raise ManifestParseError(lineno, "expected '<digest>  <path>'")
        digest, path = line[:64], line[66:]
        if not set(digest) <= _HEX:
            raise ManifestParseError(lineno, "digest is not lowercase hex")
        digests.append((path, digest))
    if boot is None:
        raise ManifestParseError(
            len(text.splitlines()) + 1, "missing boot= trailer"
        )
    try:
        return IntegrityManifest(digests=tuple(digests), boot_pointer=boot)
    except ValueError as exc:
        raise ManifestParseError(1, str(exc)) from exc


# ---------------------------------------------------------------------------
# tampering


class TamperKind(enum.Enum):
    MODIFY_FILE = "modify-file"
    SHADOW_BOOT = "shadow-boot"


@dataclass(frozen=True)
class TamperAction:
    """ModifyFile alters the content of an existing file. ShadowBoot
    points the boot sector at ``path``, a new file that no manifest
    lists, and leaves every listed file untouched."""

    kind: TamperKind
    path: str


def tamper(key: KeyState, action: TamperAction) -> KeyState:
    """Apply a tamper action, returning the altered key marked
    compromised. Its own checking tools lie from then on."""
    files = key.file_map()
    if action.kind is TamperKind.MODIFY_FILE:
        if action.path not in files:
            raise TamperError(f"no file {action.path!r} to modify")
        entry = files[action.path]
        altered = FileEntry(
            entry.size_bytes, entry.file_class, f"tampered::{entry.content}"
        )
        return replace(
            key.with_file(action.path, altered), compromised=True
        )
    if action.path in files:
        raise TamperError(
            f"shadow boot target {action.path!r} already exists"
        )
    payload = FileEntry(0, FileClass.PERSONAL, f"shadow::{action.path}")
    new_files = dict(files)
    new_files[action.path] = payload
    return replace(
        key, files=new_files, boot_path=action.path, compromised=True
    )


# ---------------------------------------------------------------------------
# verification


class Outcome(enum.Enum):
    PASS = "pass"
    FAIL_DIGEST = "fail-digest"
    FAIL_BOOT_POINTER = "fail-boot-pointer"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    offending_path: str | None = None

    def __post_init__(self):
        if (self.outcome is Outcome.PASS) != (self.offending_path is None):
            raise ValueError("offending_path is set exactly on failure")

    @property
    def passed(self) -> bool:
        return self.outcome is Outcome.PASS


_PASS = Verdict(Outcome.PASS)


def check_against(subject: KeyState, reference: IntegrityManifest) -> Verdict:
    """Raw comparison of a key against a reference manifest, digests
    first in path order, boot pointer last."""
    files = subject.file_map()
    ref = reference.digest_map()
    system = {
        p for p, e in files.items() if e.file_class is FileClass.SYSTEM
    }
    for path in sorted(set(ref) | system):
        if path not in ref or path not in files:
            return Verdict(Outcome.FAIL_DIGEST, path)
        if content_digest(files[path].content) != ref[path]:
            return Verdict(Outcome.FAIL_DIGEST, path)
    if subject.boot_path not in ref:
        return Verdict(Outcome.FAIL_BOOT_POINTER, subject.boot_path)
    return _PASS


def verify(
    verifier: KeyState, subject: KeyState, reference: IntegrityManifest
) -> Verdict:
    """Run the verifier's checking tools over the subject.

    A compromised verifier reports Pass no matter what; the attacker
    shipped modified versions of every tool that could have told on it.
    The two snapshots must be distinct objects, a key cannot check
    itself.
    """
    if verifier is subject:
        raise ValueError("a key cannot test its own integrity")
    if verifier.compromised:
        return _PASS
    return check_against(subject, reference)


# ---------------------------------------------------------------------------
# meetings


class Protocol(enum.Enum):
    NEWEST_BOOTS = "newest-boots"
    RANDOM_DRAW = "random-draw"
    TWO_KEY_OWNER = "two-key-owner"


@dataclass(frozen=True)
class MeetingResult:
    """What one encounter produced: the verdict of whatever check ran,
    which side booted (0 for the first key, 1 for the second), both keys
    afterwards, and the index of the flagged key if the check failed."""

    verdict: Verdict
    booter: int
    keys: tuple
    flagged: int | None = None


_EPOCH = datetime.datetime(2013, 1, 1, tzinfo=datetime.timezone.utc)


def _default_now(a: KeyState, b: KeyState) -> datetime.datetime:
    stamps = [
        ev.timestamp
        for key in (a, b)
        for ev in key.genealogy.events
        if isinstance(ev, gen.GenealogyEvent)
    ]
    return max(stamps, default=_EPOCH)


def _upgrade_pair(src: KeyState, tgt: KeyState, now) -> tuple:
    """The logical effect of src upgrading tgt: same file and genealogy
    rules as a planned upgrade, without the transfer-time model."""
    src_after = replace(
        src,
        genealogy=gen.record_spawn(
            src.genealogy,
            gen.GenealogyEvent(
                gen.EventKind.SPAWN, now, src.locale, src.capacity_kib, 1
            ),
        ),
    )
    rebirth = gen.GenealogyEvent(
        gen.EventKind.BIRTH, now, src.locale, tgt.capacity_kib, 1
    )
    upgraded = KeyState(
        version=src.version,
        files=_upgraded_files(src, tgt),
        image_bytes=src.image_bytes,
        genealogy=gen.record_upgrade(tgt.genealogy, src_after.genealogy, rebirth),
        capacity_kib=tgt.capacity_kib,
        boot_path=src.boot_path,
        locale=src.locale,
        share_prefix=src.share_prefix,
        compromised=src.compromised,
    )
    return src_after, upgraded


def _newer(a: KeyState, b: KeyState) -> int:
    return 1 if b.version.build_date > a.version.build_date else 0


def meeting(
    a: KeyState,
    b: KeyState,
    protocol: Protocol,
    rng: random.Random,
    *,
    trusted: IntegrityManifest | None = None,
    now: datetime.datetime | None = None,
) -> MeetingResult:
    """One encounter between two key owners.

    NewestBoots is the unguarded habit: the newer key boots and upgrades
    the other, no questions asked, so a tampered key that claims the
    newest version spreads freely. RandomDraw flips a fair coin for who
    boots; the booter verifies the other key first and a failed check
    blocks the upgrade and flags the subject. TwoKeyOwner lets the
    upgrade happen and then has the owner's spare key, whose tools are
    clean, check the result.

    ``trusted`` supplies the reference manifest; when omitted it is
    reconstructed from the subject's claimed version, see
    expected_manifest for what that concedes. ``now`` timestamps any
    genealogy records and defaults to the latest event either key
    carries.
    """
    if a is b:
        raise ValueError("a key cannot meet itself")
    keys = [a, b]
    if now is None:
        now = _default_now(a, b)
    newer = _newer(a, b)

    if protocol is Protocol.NEWEST_BOOTS:
        booter, subject = newer, 1 - newer
        if keys[booter].version != keys[subject].version:
            keys[booter], keys[subject] = _upgrade_pair(
                keys[booter], keys[subject], now
            )
        return MeetingResult(_PASS, booter, tuple(keys))

    if protocol is Protocol.RANDOM_DRAW:
        booter = 0 if rng.random() < 0.5 else 1
        subject = 1 - booter
        reference = trusted
        if reference is None:
            reference = expected_manifest(
                keys[subject].version,
                keys[subject].paths_of(FileClass.SYSTEM),
            )
        verdict = verify(keys[booter], keys[subject], reference)
        if not verdict.passed:
            return MeetingResult(verdict, booter, tuple(keys), subject)
        if keys[0].version != keys[1].version:
            keys[newer], keys[1 - newer] = _upgrade_pair(
                keys[newer], keys[1 - newer], now
            )
        return MeetingResult(verdict, booter, tuple(keys))

    if protocol is Protocol.TWO_KEY_OWNER:
        booter, subject = newer, 1 - newer
        if keys[booter].version != keys[subject].version:
            keys[booter], keys[subject] = _upgrade_pair(
                keys[booter], keys[subject], now
            )
        reference = trusted
        if reference is None:
            reference = expected_manifest(
                keys[subject].version,
                keys[subject].paths_of(FileClass.SYSTEM),
            )
        verdict = check_against(keys[subject], reference)
        if not verdict.passed:
            return MeetingResult(verdict, booter, tuple(keys), subject)
        return MeetingResult(verdict, booter, tuple(keys))

    raise ValueError(f"unknown protocol {protocol!r}")


# ---------------------------------------------------------------------------
# trust simulation


@dataclass(frozen=True)
class TrustSimConfig:
    """Population of keys meeting pairwise at random.

    ``tampered_initial`` keys start compromised, carrying a modified
    system file and a version bump so the legacy protocol always lets
    them boot. Flagged keys sit out the rest of the run unless
    ``quarantine_flagged`` is off.
    """

    population: int
    tampered_initial: int
    meetings: int
    protocol: Protocol
    rng_seed: int = 0
    quarantine_flagged: bool = True

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be at least 1")
        if not 0 <= self.tampered_initial <= self.population:
            raise ValueError("tampered_initial must be within the population")
        if self.meetings < 0:
            raise ValueError("meetings must be non-negative")
        if not isinstance(self.protocol, Protocol):
            raise ValueError("protocol must be a Protocol")


@dataclass(frozen=True)
class TrustSimResult:
    """infected_over_time[i] counts compromised keys after i meetings,
    quarantined ones included; its first entry is the seeded count."""

    infected_over_time: tuple
    detections: int
    false_negatives: int
    quarantined: int

    def __post_init__(self):
        object.__setattr__(
            self, "infected_over_time", tuple(self.infected_over_time)
        )


_BASE_VERSION = gen.ProvenanceHeader(
    "Demo Live 1.0", datetime.date(2013, 1, 1), "en_US.UTF-8", "stable", "amd64"
)
_TAMPERED_VERSION = gen.ProvenanceHeader(
    "Demo Live 1.1", datetime.date(2013, 2, 1), "en_US.UTF-8", "stable", "amd64"
)
_SIM_WHITELIST = frozenset({"/live/filesystem.squashfs"})
_SIM_CAPACITY_KIB = 7_812_500


def _sim_population(config: TrustSimConfig) -> dict:
    """The starting keys: clean ones from the base image, tampered ones
    from a fake newer release with one modified file."""
    base = ImageManifest(
        version=_BASE_VERSION,
        whitelist=_SIM_WHITELIST,
        image_bytes=2_700_000_000,
    )
    fake = ImageManifest(
        version=_TAMPERED_VERSION,
        whitelist=_SIM_WHITELIST,
        image_bytes=2_700_000_000,
    )
    width = max(3, len(str(config.population - 1)))
    keys = {}
    for i in range(config.population):
        key_id = f"key-{i:0{width}d}"
        if i < config.tampered_initial:
            key = KeyState.from_manifest(fake, _SIM_CAPACITY_KIB, _EPOCH)
            key = tamper(
                key,
                TamperAction(TamperKind.MODIFY_FILE, "/live/filesystem.squashfs"),
            )
        else:
            key = KeyState.from_manifest(base, _SIM_CAPACITY_KIB, _EPOCH)
        keys[key_id] = key
    return keys


def run_trust_sim(config: TrustSimConfig) -> TrustSimResult:
    """Run the meeting schedule: uniform random pairs, no self-meetings,
    deterministic under rng_seed.

    detections counts failed checks. false_negatives counts meetings
    that ended Pass while a participant was compromised. When fewer than
    two keys remain unflagged a meeting slot passes with no encounter.
    """
    rng = random.Random(config.rng_seed)
    keys = _sim_population(config)
    ids = sorted(keys)
    quarantined = set()
    detections = 0
    false_negatives = 0

    def infected() -> int:
        return sum(1 for k in keys.values() if k.compromised)

    trajectory = [infected()]
    for step in range(config.meetings):
        pool = [i for i in ids if i not in quarantined]
        if len(pool) < 2:
            trajectory.append(trajectory[-1])
            continue
        id_a, id_b = rng.sample(pool, 2)
        now = _EPOCH + datetime.timedelta(minutes=step + 1)
        result = meeting(keys[id_a], keys[id_b], config.protocol, rng, now=now)
        keys[id_a], keys[id_b] = result.keys
        if result.verdict.passed:
            if keys[id_a].compromised or keys[id_b].compromised:
                false_negatives += 1
        else:
            detections += 1
            if config.quarantine_flagged:
                quarantined.add((id_a, id_b)[result.flagged])
        trajectory.append(infected())
    return TrustSimResult(
        infected_over_time=tuple(trajectory),
        detections=detections,
        false_negatives=false_negatives,
        quarantined=len(quarantined),
    )


def trust_sim_result_to_json(result: TrustSimResult) -> str:
    doc = {
        "detections": result.detections,
        "false_negatives": result.false_negatives,
        "infected_over_time": list(result.infected_over_time),
        "quarantined": result.quarantined,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
