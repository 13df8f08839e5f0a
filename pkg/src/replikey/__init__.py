"""Toolkit for modeling self-replicating bootable USB keys.

Five layers, each importable on its own:

- genealogy: the nested event log every key carries, its text format,
  and lineage statistics.
- replicator: key and device snapshots, the two-key safety gate, clone
  and upgrade planning with exact transfer timing, and inventory JSON.
- spreadsim: synchronous-round deployment of one key through a room and
  redeployment of upgrades through an already seeded fleet.
- integrity: digest manifests, tamper models, cross-verification, and a
  seeded simulation of meeting protocols.
- cli: the `replikey` command exposing all of the above over files.

The most common entry points are re-exported here.
"""

from .genealogy import (
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
from .replicator import (
    Bus,
    CapacityExceeded,
    CloneMode,
    ClonePlan,
    DEFAULT_UPGRADE_RATIO,
    FileClass,
    FileEntry,
    ImageManifest,
    KeyState,
    OverwriteNotConfirmed,
    RefusalNotTwoUsb,
    RefusalTargetIsSource,
    ReplicationError,
    TargetNotBlank,
    VirtualDevice,
    classify_paths,
    execute_plan,
    inventory_from_json,
    inventory_to_json,
    plan_clone,
    plan_upgrade,
    select_target,
    share_merge,
)
from .spreadsim import (
    DEFAULT_CAPACITY_KIB,
    SimConfig,
    SimResult,
    rounds_closed_form,
    run_redeployment,
    run_room,
    sim_config_from_json,
    sim_result_to_json,
    summarize,
    time_series_rows,
)
from .integrity import (
    IntegrityError,
    IntegrityManifest,
    ManifestParseError,
    MeetingResult,
    Outcome,
    Protocol,
    TamperAction,
    TamperError,
    TamperKind,
    TrustSimConfig,
    TrustSimResult,
    Verdict,
    build_manifest,
    check_against,
    content_digest,
    expected_manifest,
    manifest_from_text,
    manifest_to_text,
    meeting,
    run_trust_sim,
    tamper,
    trust_sim_result_to_json,
    verify,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # genealogy
    "EventKind",
    "Genealogy",
    "GenealogyEvent",
    "GenealogyParseError",
    "GenealogyWarning",
    "LineageStats",
    "ProvenanceHeader",
    "UpgradeEvent",
    "child_genealogy",
    "lint",
    "own_spawn_count",
    "parse",
    "record_birth",
    "record_spawn",
    "record_upgrade",
    "serialize",
    "stats",
    # replicator
    "Bus",
    "CapacityExceeded",
    "CloneMode",
    "ClonePlan",
    "DEFAULT_UPGRADE_RATIO",
    "FileClass",
    "FileEntry",
    "ImageManifest",
    "KeyState",
    "OverwriteNotConfirmed",
    "RefusalNotTwoUsb",
    "RefusalTargetIsSource",
    "ReplicationError",
    "TargetNotBlank",
    "VirtualDevice",
    "classify_paths",
    "execute_plan",
    "inventory_from_json",
    "inventory_to_json",
    "plan_clone",
    "plan_upgrade",
    "select_target",
    "share_merge",
    # spreadsim
    "DEFAULT_CAPACITY_KIB",
    "SimConfig",
    "SimResult",
    "rounds_closed_form",
    "run_redeployment",
    "run_room",
    "sim_config_from_json",
    "sim_result_to_json",
    "summarize",
    "time_series_rows",
    # integrity
    "IntegrityError",
    "IntegrityManifest",
    "ManifestParseError",
    "MeetingResult",
    "Outcome",
    "Protocol",
    "TamperAction",
    "TamperError",
    "TamperKind",
    "TrustSimConfig",
    "TrustSimResult",
    "Verdict",
    "build_manifest",
    "check_against",
    "content_digest",
    "expected_manifest",
    "manifest_from_text",
    "manifest_to_text",
    "meeting",
    "run_trust_sim",
    "tamper",
    "trust_sim_result_to_json",
    "verify",
]
