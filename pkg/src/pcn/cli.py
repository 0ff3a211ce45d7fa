"""``pcn`` command-line tool.  Every subcommand is a thin wrapper over :mod:`pcn.repo` or :mod:`pcn.simnet`."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import EpochMismatch, PCNError, PolicyNotSatisfied, PolicySyntaxError
from .replica_mgmt import CommandOp
from .repo import RepoDir, introduce_repos
from .simnet.scenario import run_file

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args, data, text: str) -> None:
    if args.json:
        print(json.dumps(data, sort_keys=True, indent=2))
    else:
        print(text)


def cmd_init(args) -> int:
    repo = RepoDir.init(args.repo, args.label, args.device)
    _emit(args, {"label": args.label, "principal": repo.principal.hex, "device": args.device},
          f"initialized {args.repo} for /{args.label} ({repo.principal.hex[:16]}...)")
    return EXIT_OK


def cmd_intro(args) -> int:
    a, b = RepoDir(args.repo_a), RepoDir(args.repo_b)
    ok = introduce_repos(a, b, answer_a=args.answer_a, answer_b=args.answer_b,
                         expect_a=args.expect_a, expect_b=args.expect_b)
    _emit(args, {"verified": ok}, "introduction verified" if ok else "introduction FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_publish(args) -> int:
    repo = RepoDir(args.repo)
    name = repo.publish(Path(args.path).read_bytes(), args.name, args.read_policy, args.write_policy)
    _emit(args, {"name": repo.render(name), "version": name.version}, f"published {repo.render(name)}")
    return EXIT_OK


def cmd_get(args) -> int:
    repo = RepoDir(args.repo)
    source = RepoDir(args.source) if args.source else None
    content = repo.get(args.name, source)
    if args.output:
        Path(args.output).write_bytes(content)
    else:
        sys.stdout.buffer.write(content)
        sys.stdout.flush()
    return EXIT_OK


def cmd_replicate(args) -> int:
    repo = RepoDir(args.repo)
    op = CommandOp.UNREPLICATE if args.remove else CommandOp.REPLICATE
    dev = repo.replicate(args.name, args.device, op)
    _emit(args, {"device": repo.render(dev), "op": op.name.lower(), "target": args.name},
          f"queued {op.name.lower()} {args.name} for {repo.render(dev)}")
    return EXIT_OK


def cmd_keygen(args) -> int:
    repo = RepoDir(args.repo)
    if args.import_file:
        kind = repo.import_key(Path(args.import_file).read_bytes())
        _emit(args, {"imported": kind}, f"imported {kind}")
        return EXIT_OK
    if not args.attrs:
        raise argparse.ArgumentTypeError("--attrs is required unless --import is given")
    attrs = [a.strip() for a in args.attrs.split(",") if a.strip()]
    sk, pk = repo.keygen(attrs, args.holder)
    if args.out:
        Path(args.out).write_bytes(sk.encode())
        Path(args.out + ".pk").write_bytes(pk.encode())
    else:
        repo.import_key(sk.encode())
    _emit(args, {"attributes": sorted(attrs), "epoch": sk.epoch, "holder": args.holder or repo.principal.display_label},
          f"issued key for {', '.join(sorted(attrs))} at epoch {sk.epoch}")
    return EXIT_OK


def cmd_rekey(args) -> int:
    epoch = RepoDir(args.repo).rekey()
    _emit(args, {"epoch": epoch}, f"rekeyed to epoch {epoch}")
    return EXIT_OK


def cmd_revoke(args) -> int:
    ann = RepoDir(args.repo).revoke_identity()
    if args.out:
        Path(args.out).write_bytes(ann)
    _emit(args, {"revocation": ann.hex()}, "identity revoked; revocation announcement written to the log")
    return EXIT_OK


def cmd_ls(args) -> int:
    repo = RepoDir(args.repo)
    rows = repo.listing(args.prefix)
    _emit(args, [{"name": n, "version": v, "kind": k} for n, v, k in rows],
          "\n".join(f"{n}" + (f"  v{v}" if v is not None else "") + f"  {k}" for n, v, k in rows))
    return EXIT_OK


def cmd_status(args) -> int:
    rows = RepoDir(args.repo).status()
    _emit(args, [r.__dict__ for r in rows],
          "\n".join(f"{r.name}  {r.device}  v{r.version}  {r.state}" for r in rows))
    return EXIT_OK


def cmd_sim_run(args) -> int:
    report = run_file(args.scenario, args.seed, strict=False)
    if args.json:
        print(report.to_json())
    else:
        sys.stdout.write(report.to_text())
    if args.record:
        Path(args.record).write_text(report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcn", description="Personal content networking node and simulator")
    parser.add_argument("--repo", default=os.environ.get("PCN_REPO", ".pcn"), help="repository directory")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--repo", default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, **kw) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kw)

    p = add("init", help="create a key pair and namespace")
    p.add_argument("label")
    p.add_argument("--device", default="main")
    p.set_defaults(func=cmd_init)

    p = add("intro", help="run the interlock between two local repositories")
    p.add_argument("repo_a")
    p.add_argument("repo_b")
    for flag in ("--answer-a", "--answer-b", "--expect-a", "--expect-b"):
        p.add_argument(flag, type=int, default=0)
    p.set_defaults(func=cmd_intro)

    p = add("publish", help="encrypt a file under a name")
    p.add_argument("path")
    p.add_argument("name")
    p.add_argument("--read-policy")
    p.add_argument("--write-policy")
    p.set_defaults(func=cmd_publish)

    p = add("get", help="decrypt a named file")
    p.add_argument("name")
    p.add_argument("-o", "--output")
    p.add_argument("--from", dest="source", help="read the packet from another repository")
    p.set_defaults(func=cmd_get)

    p = add("replicate", help="command one of your devices to replicate a prefix")
    p.add_argument("name")
    p.add_argument("--device", required=True)
    p.add_argument("--remove", action="store_true", help="unreplicate instead")
    p.set_defaults(func=cmd_replicate)

    p = add("keygen", help="issue an attribute key")
    p.add_argument("--attrs")
    p.add_argument("--for", dest="holder", help="contact label of the key holder")
    p.add_argument("--out")
    p.add_argument("--import", dest="import_file", help="store a key file issued by someone else")
    p.set_defaults(func=cmd_keygen)

    p = add("rekey", help="start a new key epoch (lazy revocation)")
    p.set_defaults(func=cmd_rekey)

    p = add("revoke-identity", help="announce revocation of this identity key")
    p.add_argument("--out")
    p.set_defaults(func=cmd_revoke)

    p = add("ls", help="list names under a prefix")
    p.add_argument("prefix")
    p.set_defaults(func=cmd_ls)

    p = add("status", help="replica locations and versions")
    p.set_defaults(func=cmd_status)

    p = add("sim", help="simulator")
    simsub = p.add_subparsers(dest="sim_command", required=True, parser_class=_Parser)
    r = simsub.add_parser("run", help="run a scenario file", parents=[common])
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--record", help="also write the JSON record to this file")
    r.set_defaults(func=cmd_sim_run)
    return parser


def _reason(exc: Exception) -> str:
    if isinstance(exc, PolicyNotSatisfied):
        return f"policy not satisfied: {exc}"
    if isinstance(exc, EpochMismatch):
        return f"key epoch mismatch: {exc}"
    if isinstance(exc, PolicySyntaxError):
        return f"bad policy: {exc}"
    return f"{type(exc).__name__}: {exc}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"pcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PCNError, OSError, KeyError, ValueError) as exc:
        print(f"pcn: {_reason(exc)}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
