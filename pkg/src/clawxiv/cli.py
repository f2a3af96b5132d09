"""clawxiv: one executable for the whole author-side workflow.

Exit codes are stable across subcommands: 0 success, 1 internal error or
bad usage, 2 validation/gate failure, 3 safety refusal, 4 transmit
failure. With --json every outcome, including failures, is a single JSON
object on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import antispam, bundle, figsafe, project, publish, signing, translog
from .errors import ClawxivError, GateFailure, ValidationFailure

PROG = "clawxiv"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _say(args, text: str) -> None:
    if not (args.json or args.quiet):
        print(text)


def _project_root(args) -> Path:
    return Path(args.project or ".")


def _confirm(args, question: str) -> bool:
    if args.yes or not sys.stdin.isatty():
        return True
    answer = input(f"{question} [y/N] ").strip().lower()
    return answer in ("y", "yes")


def _default_bundle_dir(args) -> Path:
    root = _project_root(args)
    metadata = project.load_metadata(root)
    if not metadata.bundle_root:
        raise ValidationFailure(
            "no bundle recorded in project.yaml; pass the bundle directory"
        )
    return root / "out" / "bundles" / metadata.bundle_root


# --- subcommand handlers -----------------------------------------------------

def cmd_import(args) -> dict:
    if not _confirm(args, f"Import seed {args.seed} into {args.dest}?"):
        raise GateFailure("import declined")
    metadata = project.ProjectMetadata(
        title=args.title or Path(args.seed).name,
        version_label=project.parse_version_label(args.version),
        authors=list(args.author or []),
        licenses=list(args.license or ["CC0-1.0"]),
        tags=list(args.tag or []),
        push_targets=list(args.push_target or []),
    )
    handle = project.import_seed(args.seed, args.dest, metadata)
    entries = handle.import_log.entries()
    copied = sum(1 for e in entries if e.action in ("copy", "fig-add"))
    _say(args, f"imported {copied} files into {handle.root}")
    return {
        "project": str(handle.root),
        "files_imported": copied,
        "log_entries": len(entries),
    }


def cmd_fig_add(args) -> dict:
    sidecar = figsafe.fig_add(
        _project_root(args), args.figure, source_description=args.source_desc
    )
    verdict = json.loads(sidecar.read_bytes())["verdict"]
    _say(args, f"added {Path(args.figure).name} ({verdict['value']})")
    return {"sidecar": str(sidecar), "verdict": verdict}


def cmd_recheck(args) -> dict:
    target = Path(args.bundle) if args.bundle else _project_root(args)
    report = figsafe.recheck_all(target)
    payload = {
        "blocking": report.blocking,
        "entries": [
            {
                "path": entry.path,
                "verdict": entry.verdict.value.value if entry.verdict else None,
                "error": entry.error,
            }
            for entry in report.entries
        ],
    }
    for entry in payload["entries"]:
        _say(args, f"{entry['path']}: {entry['verdict'] or entry['error']}")
    if report.blocking:
        raise figsafe.SafetyRefusal(
            "re-check blocking: "
            + ", ".join(e.path for e in report.entries if e.blocking)
        )
    _say(args, "re-check clean")
    return payload


def cmd_bundle_create(args) -> dict:
    created = bundle.bundle_create(
        _project_root(args),
        include_pdf=args.include_pdf,
        build_cmd=args.build_cmd,
        created_at=args.created_at,
        container_digest=args.container_digest,
    )
    _say(args, f"bundle {created.bundle_root}")
    _say(args, f"  at {created.root_dir}")
    return {"bundle_root": created.bundle_root, "bundle_dir": str(created.root_dir)}


def cmd_bundle_sign(args) -> dict:
    root = _project_root(args)
    bundle_dir = Path(args.bundle) if args.bundle else _default_bundle_dir(args)
    signer = signing.SignerIdentity(
        kind=args.kind,
        display_name=args.signer,
        model_name=args.model_name,
        provider=args.model_provider,
        release=args.release,
    )
    custody = signing.CustodyEvidence(
        machine_id=args.machine_id,
        container_id=args.container_id,
        hardware_uuid=args.hardware_uuid,
    )
    attestation, path = bundle.sign_bundle(root, bundle_dir, signer, custody)
    attestations = [
        a for _, a in bundle.load_bundle_attestations(bundle_dir) if a is not None
    ]
    manifest = signing.build_signing_manifest(root, attestations)
    payload = {
        "attestation": str(path),
        "artifact_sha256": attestation.artifact_sha256,
        "complete": manifest.complete,
        "missing_signers": manifest.missing_signers,
    }
    _say(args, f"signed as {args.signer}; attestation at {path.name}")
    if args.promote:
        promoted = signing.promote_version(root, manifest)
        payload["promoted_to"] = promoted.render()
        _say(args, f"promoted to {promoted.render()}")
    elif not manifest.complete:
        _say(args, "still missing: " + ", ".join(manifest.missing_signers))
    return payload


def cmd_bundle_verify(args) -> dict:
    report = bundle.bundle_verify(args.bundle_dir)
    for problem in report.problems:
        print(f"problem: {problem}", file=sys.stderr)
    _say(
        args,
        "verify: hashes={} root={} signatures={} safety={} -> {}".format(
            "ok" if report.hashes_ok else "FAIL",
            "ok" if report.root_ok else "FAIL",
            report.signatures,
            "ok" if report.safety_ok else "FAIL",
            "pass" if report.passed else "fail",
        ),
    )
    if not report.safety_ok:
        raise figsafe.SafetyRefusal(
            "bundle contains safety-blocking figures: " + "; ".join(report.problems)
        )
    if not report.passed:
        raise GateFailure("bundle verification failed: " + "; ".join(report.problems))
    return report.to_dict()


def cmd_bundle_push(args) -> dict:
    root = _project_root(args)
    bundle_dir = Path(args.bundle_dir) if args.bundle_dir else _default_bundle_dir(args)
    targets = publish.targets_from_config(root, args.target)
    if not _confirm(args, f"Publish bundle {bundle_dir.name} to {len(targets)} target(s)?"):
        raise GateFailure("push declined")
    evidence = antispam.load_evidence(root)
    index = antispam.load_author_index(args.author_index)
    receipts = publish.bundle_push(
        bundle_dir,
        targets,
        evidence,
        index,
        antispam.AdmissionPolicy(min_difficulty=args.min_difficulty),
        project_root=root,
        force_ids=args.force_ids,
    )
    for receipt in receipts:
        status = receipt.content_id if receipt.ok else f"FAILED: {receipt.error}"
        _say(args, f"{receipt.target}: {status}")
    payload = {"receipts": [r.to_dict() for r in receipts]}
    failed = [r for r in receipts if not r.ok]
    if failed:
        raise publish.TransmitFailure(
            f"{len(failed)} of {len(receipts)} targets failed: "
            + "; ".join(f"{r.target}: {r.error}" for r in failed)
        )
    return payload


def cmd_endorse(args) -> dict:
    root = _project_root(args)
    bundle_root = args.bundle_root or project.load_metadata(root).bundle_root
    if not bundle_root:
        raise ValidationFailure("no bundle root given or recorded")
    vouch = antispam.create_vouch(bundle_root, args.key)
    path = antispam.save_vouch(root, vouch)
    _say(args, f"vouch written to {path}")
    return {"vouch": str(path), "bundle_root": bundle_root}


def cmd_pow(args) -> dict:
    root = _project_root(args)
    if args.pow_action == "mint":
        bundle_root = args.bundle_root or project.load_metadata(root).bundle_root
        if not bundle_root:
            raise ValidationFailure("no bundle root given or recorded")
        stamp = antispam.mint_pow(bundle_root, args.bits)
        path = antispam.save_stamp(root, stamp)
        _say(args, f"stamp nonce={stamp.nonce} written to {path}")
        return {"stamp": str(path), "nonce": stamp.nonce, "bits": stamp.difficulty_bits}
    data = json.loads(Path(args.stamp).read_bytes())
    stamp = antispam.PowStamp.from_dict(data)
    if not antispam.verify_pow(stamp):
        raise GateFailure(f"stamp does not verify at {stamp.difficulty_bits} bits")
    _say(args, "stamp verifies")
    return {"verified": True, "bits": stamp.difficulty_bits}


def cmd_log(args) -> dict:
    log = translog.project_log(_project_root(args))
    action = args.log_action
    if action == "root":
        state = log.state()
        _say(args, f"size={state.tree_size} root={state.root_hash.hex()}")
        return {"tree_size": state.tree_size, "root": state.root_hash.hex()}
    if action == "show":
        entry = log.entry(args.index)
        _say(args, log.entry_bytes(args.index).decode("utf-8"))
        return {"index": args.index, "entry": entry.to_dict()}
    if action == "prove-inclusion":
        proof = log.prove_inclusion(args.index, args.size)
        root_hash = log.root(proof.tree_size)
        payload = {"proof": proof.to_dict(), "root": root_hash.hex()}
        _say(args, json.dumps(payload))
        return payload
    if action == "prove-consistency":
        proof = log.prove_consistency(args.old, args.new)
        payload = {
            "proof": proof.to_dict(),
            "old_root": log.root(args.old).hex(),
            "new_root": log.root(proof.new_size).hex(),
        }
        _say(args, json.dumps(payload))
        return payload

    key = signing.load_private_key(args.key)
    if action == "append-classification":
        payload_body = {"tags": [t.strip() for t in args.tags.split(",") if t.strip()]}
        entry = translog.make_entry("classification", args.bundle_root, payload_body, key)
    else:  # append-appeal
        entry = translog.make_entry(
            "appeal",
            args.bundle_root,
            {"reason": args.reason, "ref_index": args.ref_index},
            key,
        )
    state = log.append(entry)
    _say(args, f"appended entry {state.tree_size - 1}; root={state.root_hash.hex()}")
    return {"index": state.tree_size - 1, "root": state.root_hash.hex()}


def cmd_resolve(args) -> dict:
    root = _project_root(args)
    try:
        targets = publish.targets_from_config(root, args.target)
    except ValidationFailure:
        targets = []
    if not targets:
        raise ValidationFailure("no targets configured to resolve from")
    dest = publish.resolve(args.content_id, targets, args.dest)
    _say(args, f"resolved to {dest}")
    return {"dest": str(dest)}


def cmd_validate(args) -> dict:
    target = Path(args.dir) if args.dir else _project_root(args)
    violations = project.validate_project(target)
    for violation in violations:
        _say(args, f"violation: {violation}")
    if violations:
        raise ValidationFailure(
            f"{len(violations)} violation(s): " + "; ".join(violations)
        )
    _say(args, "project valid")
    return {"violations": []}


# --- parser ------------------------------------------------------------------

def build_parser() -> _Parser:
    # SUPPRESS defaults: a subparser must not clobber global flags that were
    # given before the subcommand (argparse copies subparser defaults over
    # the parent namespace otherwise)
    common = _Parser(add_help=False)
    common.add_argument("--project", default=argparse.SUPPRESS,
                        help="project directory (default .)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="emit one JSON object on stdout")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress informational output")
    common.add_argument("--yes", action="store_true", default=argparse.SUPPRESS,
                        help="skip confirmation prompts")

    parser = _Parser(prog=PROG, parents=[common],
                     description="author-side toolchain for signed research bundles")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand")

    p = sub.add_parser("import", parents=[common], help="normalize a seed into a project")
    p.add_argument("seed")
    p.add_argument("--dest", required=True)
    p.add_argument("--title")
    p.add_argument("--version", default="v1")
    p.add_argument("--author", action="append", metavar="NAME[:KIND[:RESP]]")
    p.add_argument("--license", action="append")
    p.add_argument("--tag", action="append")
    p.add_argument("--push-target", action="append", metavar="KIND:LOCATION")
    p.set_defaults(handler=cmd_import)

    p = sub.add_parser("fig-add", parents=[common],
                       help="add a figure through the safety gate")
    p.add_argument("figure")
    p.add_argument("--source-desc", default="")
    p.set_defaults(handler=cmd_fig_add)

    p = sub.add_parser("recheck", parents=[common],
                       help="re-run the safety check on all figures")
    p.add_argument("--bundle", help="check a bundle directory instead of the project")
    p.set_defaults(handler=cmd_recheck)

    p = sub.add_parser("bundle-create", parents=[common],
                       help="assemble and seal a bundle")
    p.add_argument("--build-cmd")
    p.add_argument("--include-pdf", action="store_true", default=None)
    p.add_argument("--created-at", help="pin the manifest timestamp (testing)")
    p.add_argument("--container-digest", default="")
    p.set_defaults(handler=cmd_bundle_create)

    p = sub.add_parser("bundle-sign", parents=[common],
                       help="attach a sign-and-discard attestation")
    p.add_argument("--bundle", help="bundle directory (default: last created)")
    p.add_argument("--signer", required=True, help="display name")
    p.add_argument("--kind", choices=("human", "ai"), default="human")
    p.add_argument("--model-name", default="")
    p.add_argument("--model-provider", default="")
    p.add_argument("--release", default="")
    p.add_argument("--machine-id", default="")
    p.add_argument("--container-id", default="")
    p.add_argument("--hardware-uuid", default="")
    p.add_argument("--promote", action="store_true", default=None,
                   help="promote vN.rcM to vN if all authors have signed")
    p.set_defaults(handler=cmd_bundle_sign)

    p = sub.add_parser("bundle-verify", parents=[common],
                       help="verify hashes, root, signatures, safety")
    p.add_argument("bundle_dir")
    p.set_defaults(handler=cmd_bundle_verify)

    p = sub.add_parser("bundle-push", parents=[common],
                       help="gate and publish a bundle")
    p.add_argument("bundle_dir", nargs="?")
    p.add_argument("--target", action="append", metavar="KIND:LOCATION")
    p.add_argument("--author-index", help="file of indexed voucher public keys")
    p.add_argument("--min-difficulty", type=int,
                   default=antispam.DEFAULT_MIN_DIFFICULTY)
    p.add_argument("--force-ids", action="store_true", default=None)
    p.set_defaults(handler=cmd_bundle_push)

    p = sub.add_parser("endorse", parents=[common],
                       help="co-sign a vouching assertion")
    p.add_argument("--bundle-root")
    p.add_argument("--key", required=True, help="voucher private key PEM")
    p.set_defaults(handler=cmd_endorse)

    p = sub.add_parser("pow", parents=[common], help="proof-of-work stamps")
    pow_sub = p.add_subparsers(dest="pow_action", metavar="mint|verify")
    p_mint = pow_sub.add_parser("mint", parents=[common])
    p_mint.add_argument("--bundle-root")
    p_mint.add_argument("--bits", type=int, default=antispam.DEFAULT_MIN_DIFFICULTY)
    p_verify = pow_sub.add_parser("verify", parents=[common])
    p_verify.add_argument("stamp")
    p.set_defaults(handler=cmd_pow)

    p = sub.add_parser("log", parents=[common], help="transparency log")
    log_sub = p.add_subparsers(dest="log_action", metavar="action")
    log_sub.add_parser("root", parents=[common])
    p_show = log_sub.add_parser("show", parents=[common])
    p_show.add_argument("--index", type=int, required=True)
    p_inc = log_sub.add_parser("prove-inclusion", parents=[common])
    p_inc.add_argument("--index", type=int, required=True)
    p_inc.add_argument("--size", type=int)
    p_con = log_sub.add_parser("prove-consistency", parents=[common])
    p_con.add_argument("--old", type=int, required=True)
    p_con.add_argument("--new", type=int)
    p_cls = log_sub.add_parser("append-classification", parents=[common])
    p_cls.add_argument("--bundle-root", required=True)
    p_cls.add_argument("--tags", required=True, help="comma-separated tags")
    p_cls.add_argument("--key", required=True)
    p_app = log_sub.add_parser("append-appeal", parents=[common])
    p_app.add_argument("--bundle-root", required=True)
    p_app.add_argument("--ref-index", type=int, required=True)
    p_app.add_argument("--reason", required=True)
    p_app.add_argument("--key", required=True)
    p.set_defaults(handler=cmd_log)

    p = sub.add_parser("resolve", parents=[common],
                       help="fetch a bundle by content id")
    p.add_argument("content_id")
    p.add_argument("--dest", required=True)
    p.add_argument("--target", action="append", metavar="KIND:LOCATION")
    p.set_defaults(handler=cmd_resolve)

    p = sub.add_parser("validate", parents=[common], help="validate a project")
    p.add_argument("dir", nargs="?")
    p.set_defaults(handler=cmd_validate)

    return parser


def _emit(args_json: bool, payload: dict) -> None:
    if args_json:
        print(json.dumps(payload, sort_keys=True))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_mode = "--json" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        _emit(json_mode, {"ok": False, "category": "usage", "error": str(exc)})
        return 1

    if not getattr(args, "subcommand", None):
        print(parser.format_usage(), file=sys.stderr)
        _emit(json_mode, {"ok": False, "category": "usage", "error": "no subcommand"})
        return 1
    if args.subcommand == "pow" and not getattr(args, "pow_action", None):
        print(f"{PROG}: pow requires mint or verify", file=sys.stderr)
        _emit(json_mode, {"ok": False, "category": "usage", "error": "pow action"})
        return 1
    if args.subcommand == "log" and not getattr(args, "log_action", None):
        print(f"{PROG}: log requires an action", file=sys.stderr)
        _emit(json_mode, {"ok": False, "category": "usage", "error": "log action"})
        return 1

    args.project = getattr(args, "project", None)
    args.json = bool(getattr(args, "json", False))
    args.quiet = bool(getattr(args, "quiet", False))
    args.yes = bool(getattr(args, "yes", False))

    try:
        payload = args.handler(args)
    except _UsageError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        _emit(args.json, {"ok": False, "category": "usage", "error": str(exc)})
        return 1
    except ClawxivError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        _emit(args.json, {"ok": False, "category": exc.category, "error": str(exc)})
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"{PROG}: internal error: {exc}", file=sys.stderr)
        _emit(args.json, {"ok": False, "category": "internal", "error": str(exc)})
        return 1

    payload = {"ok": True, **(payload or {})}
    _emit(args.json, payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
