"""Command line front end.

Every capability of the library is reachable as a subcommand over plain
files: genealogy text in, canonical text or stats out; inventory JSON in,
plans or updated inventories out; simulation parameters in, JSON or CSV
reports out.

Exit codes: 0 on success (a failed verification verdict is still a
success, the verdict is the answer), 1 on domain errors such as parse
failures or replication refusals, 2 on usage errors. Diagnostics go to
the error stream as a single line naming the file and line for parse
errors or the refusal rule for replication errors. Output files are only
written on success.

Everything is deterministic: rerunning a subcommand on the same inputs
produces byte-identical output, and the only randomness, in trust-sim,
is driven entirely by --seed.
"""

import argparse
import datetime
import json
import sys
import warnings
from fractions import Fraction

from . import genealogy as gen
from . import integrity as integ
from . import replicator as rep
from . import spreadsim as sim
from .units import GB, sig6

__all__ = ["dispatch", "entry", "CliError"]


class CliError(Exception):
    """Domain error with a ready-to-print one-line message."""


# ---------------------------------------------------------------------------
# shared plumbing


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_text(path: str) -> str:
    data = _read_bytes(path)
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CliError(f"{path}: not valid UTF-8") from exc


def _emit(text: str, out_path):
    if out_path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(f"cannot write {out_path}: {exc.strerror or exc}") from exc


def _parse_genealogy(path: str) -> gen.Genealogy:
    """Parse a genealogy file, forwarding lint findings to stderr as
    warnings and failing with the file and line on malformed text."""
    data = _read_bytes(path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            parsed = gen.parse(data)
        except gen.GenealogyParseError as exc:
            raise CliError(f"{path}: {exc}") from exc
    for w in caught:
        print(f"warning: {path}: {w.message}", file=sys.stderr)
    return parsed


def _load_inventory(path: str):
    text = _read_text(path)
    try:
        return rep.inventory_from_json(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except gen.GenealogyParseError as exc:
        raise CliError(f"{path}: genealogy: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise CliError(f"{path}: not an inventory document ({exc})") from exc
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _find_device(inventory, device_id):
    if device_id is None:
        for d in inventory:
            if d.is_boot_source:
                return d
        raise CliError("no boot source device in the inventory")
    for d in inventory:
        if d.id == device_id:
            return d
    raise CliError(f"no device {device_id!r} in the inventory")


def _csv(rows) -> str:
    return "".join(",".join(str(cell) for cell in row) + "\n" for row in rows)


def _arg_fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _arg_timestamp(text: str) -> datetime.datetime:
    try:
        ts = datetime.datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad timestamp {text!r}, expected YYYY-MM-DD HH:MM:SS+HH:MM"
        )
    if ts.tzinfo is None:
        raise argparse.ArgumentTypeError("timestamp must carry a UTC offset")
    return ts


# ---------------------------------------------------------------------------
# genealogy subcommands


def _cmd_genealogy_parse(args) -> str:
    return gen.serialize(_parse_genealogy(args.input))


def _cmd_genealogy_stats(args) -> str:
    s = gen.stats(_parse_genealogy(args.input))
    if args.format == "json":
        doc = {
            "births": s.birth_count,
            "spawns": s.spawn_count,
            "upgrades": s.upgrade_count,
            "provenance_headers": s.provenance_count,
            "max_embedding_depth": s.max_embedding_depth,
            "first_event": None
            if s.first_event is None
            else s.first_event.isoformat(sep=" "),
            "last_event": None
            if s.last_event is None
            else s.last_event.isoformat(sep=" "),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    first = "none" if s.first_event is None else s.first_event.isoformat(sep=" ")
    last = "none" if s.last_event is None else s.last_event.isoformat(sep=" ")
    return (
        f"births={s.birth_count} spawns={s.spawn_count} upgrades={s.upgrade_count}\n"
        f"provenance_headers={s.provenance_count}\n"
        f"max_embedding_depth={s.max_embedding_depth}\n"
        f"first_event={first}\n"
        f"last_event={last}\n"
    )


# ---------------------------------------------------------------------------
# replication subcommands


def _make_plan(args, inventory) -> rep.ClonePlan:
    target_id = rep.select_target(inventory)
    source = next(d for d in inventory if d.is_boot_source)
    target = _find_device(inventory, target_id)
    mode = args.mode
    if mode == "auto":
        mode = "fresh" if target.contents is None else "upgrade"
    if mode == "fresh":
        return rep.plan_clone(
            source, target, args.bandwidth, allow_overwrite=args.allow_overwrite
        )
    return rep.plan_upgrade(source, target, args.bandwidth, upgrade_ratio=args.ratio)


def _plan_to_json(plan: rep.ClonePlan) -> str:
    doc = {
        "mode": plan.mode.value,
        "source": plan.source,
        "target": plan.target,
        "copy_set": sorted(plan.copy_set),
        "preserve_set": sorted(plan.preserve_set),
        "bytes_total": plan.bytes_total,
        "duration_s": sig6(plan.duration_s),
        "allow_overwrite": plan.allow_overwrite,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _cmd_clone_plan(args) -> str:
    inventory = _load_inventory(args.inventory)
    return _plan_to_json(_make_plan(args, inventory))


def _cmd_clone_exec(args) -> str:
    inventory = _load_inventory(args.inventory)
    plan = _make_plan(args, inventory)
    updated = rep.execute_plan(plan, inventory, args.at)
    return rep.inventory_to_json(updated)


# ---------------------------------------------------------------------------
# simulation subcommands


def _sim_output(result, fmt: str) -> str:
    if fmt == "csv":
        return _csv(sim.time_series_rows(result))
    return sim.sim_result_to_json(result)


def _cmd_sim_room(args) -> str:
    image_bytes = args.image_gb * GB
    if image_bytes.denominator != 1:
        raise CliError("image size must come to a whole number of bytes")
    config = sim.SimConfig(
        n_participants=args.n,
        seeds=args.seeds,
        ports_per_host=args.ports,
        image_bytes=int(image_bytes),
        bandwidth_mb_s=args.bandwidth,
        setup_delay_s=args.setup_s,
        track_genealogies=not args.count_only,
    )
    return _sim_output(sim.run_room(config), args.format)


def _cmd_sim_redeploy(args) -> str:
    text = _read_text(args.config)
    try:
        config = sim.sim_config_from_json(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.config}: line {exc.lineno}: {exc.msg}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{args.config}: {exc}") from exc
    try:
        result = sim.run_redeployment(config)
    except ValueError as exc:
        raise CliError(f"{args.config}: {exc}") from exc
    return _sim_output(result, args.format)


def _cmd_trust_sim(args) -> str:
    config = integ.TrustSimConfig(
        population=args.population,
        tampered_initial=args.tampered,
        meetings=args.meetings,
        protocol=integ.Protocol(args.protocol),
        rng_seed=args.seed,
        quarantine_flagged=not args.no_quarantine,
    )
    return integ.trust_sim_result_to_json(integ.run_trust_sim(config))


# ---------------------------------------------------------------------------
# integrity subcommands


def _cmd_manifest(args) -> str:
    inventory = _load_inventory(args.inventory)
    device = _find_device(inventory, args.device)
    if device.contents is None:
        raise CliError(f"device {device.id!r} holds no key")
    return integ.manifest_to_text(integ.build_manifest(device.contents))


def _cmd_verify(args) -> str:
    inventory = _load_inventory(args.inventory)
    device = _find_device(inventory, args.device)
    if device.contents is None:
        raise CliError(f"device {device.id!r} holds no key")
    text = _read_text(args.reference)
    try:
        reference = integ.manifest_from_text(text)
    except integ.ManifestParseError as exc:
        raise CliError(f"{args.reference}: {exc}") from exc
    verdict = integ.check_against(device.contents, reference)
    out = f"verdict={verdict.outcome.value}\n"
    if verdict.offending_path is not None:
        out += f"offending_path={verdict.offending_path}\n"
    return out


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replikey",
        description="Model self-replicating bootable USB keys: genealogy "
        "logs, clone planning, spread simulation, integrity checks.",
    )
    subs = parser.add_subparsers(dest="command", metavar="command", required=True)

    def sub(name, handler, help_text):
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument(
            "-o",
            "--output",
            default=None,
            help="output file (default: standard output)",
        )
        return p

    p = sub("genealogy-parse", _cmd_genealogy_parse, "reprint a genealogy canonically")
    p.add_argument("input", help="genealogy text file")

    p = sub("genealogy-stats", _cmd_genealogy_stats, "count a genealogy's events")
    p.add_argument("input", help="genealogy text file")
    p.add_argument("--format", choices=("text", "json"), default="text")

    def clone_flags(p):
        p.add_argument("--inventory", required=True, help="inventory JSON file")
        p.add_argument(
            "--bandwidth",
            type=_arg_fraction,
            default=Fraction("4.5"),
            help="write speed in decimal MB/s (default 4.5)",
        )
        p.add_argument("--mode", choices=("auto", "fresh", "upgrade"), default="auto")
        p.add_argument(
            "--ratio",
            type=_arg_fraction,
            default=rep.DEFAULT_UPGRADE_RATIO,
            help="fraction of the image rewritten by an upgrade (default 4/5)",
        )
        p.add_argument("--allow-overwrite", action="store_true")

    p = sub("clone-plan", _cmd_clone_plan, "select a target and plan the write")
    clone_flags(p)

    p = sub("clone-exec", _cmd_clone_exec, "plan and apply, printing the new inventory")
    clone_flags(p)
    p.add_argument(
        "--at",
        type=_arg_timestamp,
        required=True,
        help="completion timestamp, e.g. '2013-02-17 13:01:38+00:00'",
    )

    p = sub("sim-room", _cmd_sim_room, "spread one key through a room")
    p.add_argument("--n", type=int, required=True, help="participants")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--ports", type=int, default=1)
    p.add_argument("--image-gb", type=_arg_fraction, default=Fraction("2.7"))
    p.add_argument("--bandwidth", type=_arg_fraction, default=Fraction("4.5"))
    p.add_argument("--setup-s", type=_arg_fraction, default=Fraction(300))
    p.add_argument(
        "--count-only",
        action="store_true",
        help="skip per-key genealogies, keeping counts only",
    )
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub("sim-redeploy", _cmd_sim_redeploy, "push releases through a seeded fleet")
    p.add_argument("--config", required=True, help="simulation config JSON file")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub("trust-sim", _cmd_trust_sim, "measure infection spread under a protocol")
    p.add_argument("--population", type=int, required=True)
    p.add_argument("--tampered", type=int, default=0)
    p.add_argument("--meetings", type=int, required=True)
    p.add_argument(
        "--protocol",
        choices=tuple(proto.value for proto in integ.Protocol),
        required=True,
    )
    p.add_argument("--seed", type=int, default=0, help="drives all randomness")
    p.add_argument("--no-quarantine", action="store_true")

    p = sub("manifest", _cmd_manifest, "print a key's reference manifest")
    p.add_argument("--inventory", required=True)
    p.add_argument("--device", default=None, help="device id (default: boot source)")

    p = sub("verify", _cmd_verify, "check a key against a reference manifest")
    p.add_argument("--inventory", required=True)
    p.add_argument("--device", default=None, help="device id (default: boot source)")
    p.add_argument("--reference", required=True, help="manifest text file")

    return parser


def dispatch(argv=None) -> int:
    """Run one invocation; returns the exit code without exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        output = args.handler(args)
        _emit(output, args.output)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except rep.ReplicationError as exc:
        print(f"error: {exc.rule}: {exc}", file=sys.stderr)
        return 1
    except (integ.IntegrityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(dispatch(sys.argv[1:]))
