"""Command-line front end.

Every command writes ``report.json`` and ``summary.csv`` into ``--out``;
``convert``/``tradeoff`` also write ``protocol.json`` plus one state file per
catalyst branch.  Exit codes: 0 all invariants hold, 2 an invariant fails
(or a stored report does not reproduce), 3 a dimension cap is hit, 4 usage.
"""

from __future__ import annotations

import argparse
import ast
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .catalysis import RESTORE_TOL, BLOCK, TRADEOFF, TRADEOFF_ALT, CatalysisError, simulate_reuse, tradeoff_convert, convert_to_catalytic, verify
from .channel_catalysis import (
    CHANNEL_CODES,
    CHOI_TOL,
    MARGINAL_TOL,
    ChannelCatalysisError,
    catalytic_channel_convert,
    channel_demo,
    mutual_info_criterion,
)
from .protocols import REGISTRY, UnknownProtocolError, get_protocol
from .serialize import csv_line, jsonable, protocol_document, read_json, write_json
from .tensor import DimensionCapError

EXIT_OK, EXIT_FAIL, EXIT_CAP, EXIT_USAGE = 0, 2, 3, 4
VARIANT_NAMES = {"block": BLOCK, "tradeoff": TRADEOFF, "tradeoff-alt": TRADEOFF_ALT}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--params expects key=val, got {item!r}")
        try:
            out[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            out[key] = val
    return out


def _versions() -> dict:
    return {"catalytic": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _load_protocol(key: str, params: dict, seed: int):
    if key not in REGISTRY:
        raise UnknownProtocolError(f"unknown protocol {key!r}")
    params = dict(params)
    if key == "synthetic":
        params.setdefault("seed", seed)
    try:
        return get_protocol(key, **params)
    except TypeError as exc:
        raise UsageError(f"bad parameters for {key}: {exc}") from None


# --------------------------------------------------------------------------
# computations, shared by the commands and by ``verify``


def _compute(command: str, cfg: dict, out: Path | None = None) -> tuple[dict, dict | None]:
    """Run ``command`` under ``cfg``; returns (report document, protocol document)."""
    tol = cfg["tol"]
    proto_doc = None
    if command == "convert":
        p = _load_protocol(cfg["protocol"], cfg["params"], cfg["seed"])
        variant = cfg["variant"]
        if variant == BLOCK:
            if cfg.get("k") is not None:
                raise UsageError("--k applies to the trade-off variants only")
            cp = convert_to_catalytic(p)
        else:
            if cfg.get("k") is None:
                raise UsageError("the trade-off variants need --k")
            cp = tradeoff_convert(p, cfg["k"], alt_catalyst=variant == TRADEOFF_ALT)
        rep = verify(cp)
        checks = rep.checks(tol)
        results = jsonable(rep)
        if out is not None:
            proto_doc = protocol_document(cp, out)
        tolerances = {"restore": tol, "psd": 1e-10}
    elif command == "reuse":
        p = _load_protocol(cfg["protocol"], cfg["params"], cfg["seed"])
        cp = convert_to_catalytic(p)
        rep = simulate_reuse(cp, cfg["rounds"])
        checks = rep.checks(tol)
        results = jsonable(rep)
        tolerances = {"restore": tol}
    elif command == "channel":
        try:
            n_ch, code, m_ch = channel_demo(cfg["code"], cfg["n"])
        except KeyError:
            raise UsageError(f"unknown code {cfg['code']!r}") from None
        rep = catalytic_channel_convert(n_ch, code, m_ch, cfg["n"], with_mutual_info=cfg["mutual_info"])
        i_n, i_m, ok = mutual_info_criterion(n_ch, m_ch)
        checks = rep.checks(tol)
        checks["mutual_info_criterion"] = ok
        results = jsonable(rep)
        results["criterion"] = jsonable({"i_n": i_n, "i_m": i_m, "transformable": ok})
        tolerances = {"choi": tol, "marginal": MARGINAL_TOL}
    else:
        raise UsageError(f"unknown command {command!r}")
    checks = jsonable(checks)
    doc = {
        "command": command,
        "config": cfg,
        "versions": _versions(),
        "tolerances": jsonable(tolerances),
        "results": results,
        "checks": checks,
        "passed": all(checks.values()),
    }
    return doc, proto_doc


def _summary(doc: dict) -> dict:
    r = doc["results"]
    row = {"command": doc["command"], "passed": doc["passed"]}
    if doc["command"] in ("convert", "reuse"):
        row.update(protocol=doc["config"]["protocol"], variant=r["variant"], n=r["n"], m=r["m"],
                   k=r["k"], eps=r["expected_eps"], p=r["success_probability"],
                   output_error=r["output_error"], restoration=r["catalyst_restoration_error"])
    else:
        row.update(code=r["code"], n=r["n"], eps=r["eps"], g3_max=r["g3_max"],
                   marginal_max=r["marginal_max"])
    row["failed"] = ";".join(k for k, v in doc["checks"].items() if not v)
    return row


def _emit(doc: dict, proto_doc: dict | None, out: Path) -> int:
    if proto_doc is not None:
        write_json(out / "protocol.json", proto_doc)
    write_json(out / "report.json", doc)
    (out / "summary.csv").write_text(csv_line(_summary(doc)))
    failed = [k for k, v in doc["checks"].items() if not v]
    if failed:
        print("FAIL: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    print(f"PASS: {doc['command']} -> {out / 'report.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def _diff(stored, fresh, tol: float, path: str = "") -> list[str]:
    if isinstance(stored, dict) and isinstance(fresh, dict):
        out = []
        for key in sorted(set(stored) | set(fresh)):
            if key not in stored or key not in fresh:
                out.append(f"{path}{key}")
            else:
                out += _diff(stored[key], fresh[key], tol, f"{path}{key}.")
        return out
    if isinstance(stored, list) and isinstance(fresh, list):
        if len(stored) != len(fresh):
            return [path.rstrip(".")]
        out = []
        for i, (a, b) in enumerate(zip(stored, fresh)):
            out += _diff(a, b, tol, f"{path}{i}.")
        return out
    num = (int, float)
    if isinstance(stored, num) and isinstance(fresh, num) and not isinstance(stored, bool) \
            and not isinstance(fresh, bool):
        return [] if abs(stored - fresh) <= tol * max(1.0, abs(fresh)) else [path.rstrip(".")]
    return [] if stored == fresh else [path.rstrip(".")]


def cmd_verify(path: Path) -> int:
    try:
        stored = read_json(path)
        command, cfg = stored["command"], stored["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from None
    fresh, _ = _compute(command, cfg)
    tol = max(float(cfg.get("tol", RESTORE_TOL)), 1e-11)  # stored values carry 12 digits
    bad = []
    for section in ("results", "checks", "passed", "tolerances"):
        bad += _diff(stored.get(section), fresh[section], tol, f"{section}.")
    if bad:
        print("FAIL: report does not reproduce: " + ", ".join(bad), file=sys.stderr)
        return EXIT_FAIL
    if not fresh["passed"]:
        print("FAIL: " + ", ".join(k for k, v in fresh["checks"].items() if not v), file=sys.stderr)
        return EXIT_FAIL
    print(f"PASS: {path} reproduces")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=None, help="tolerance for equality checks")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized protocols")
    common.add_argument("--out", type=Path, default=Path("catalytic_out"), help="output directory")
    common.add_argument("--params", nargs="*", metavar="KEY=VAL", default=[], help="protocol parameters")

    ap = _Parser(prog="catalytic", description="Catalytic conversion of distillation protocols.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", parents=[common], help="compile and verify a catalytic protocol")
    c.add_argument("protocol")
    c.add_argument("--variant", choices=sorted(VARIANT_NAMES), default="block")
    c.add_argument("--k", type=int, default=None, help="copies consumed per target (trade-off variants)")

    t = sub.add_parser("tradeoff", parents=[common], help="convert with the trade-off catalyst")
    t.add_argument("protocol")
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--alt", action="store_true", help="use the alternative catalyst")

    r = sub.add_parser("reuse", parents=[common], help="reuse one catalyst over several rounds")
    r.add_argument("protocol")
    r.add_argument("--rounds", type=int, default=3)

    ch = sub.add_parser("channel", parents=[common], help="catalytic channel simulation")
    ch.add_argument("code", choices=CHANNEL_CODES)
    ch.add_argument("--n", type=int, default=2)
    ch.add_argument("--no-mi", action="store_true", help="skip mutual information of the flagged channels")

    v = sub.add_parser("verify", help="recompute a stored report")
    v.add_argument("report", type=Path)

    sub.add_parser("list-protocols", help="show registered protocols")
    return ap


def _config(args) -> tuple[str, dict]:
    cmd = args.command
    params = _parse_params(args.params)
    if cmd in ("convert", "tradeoff"):
        variant = VARIANT_NAMES[args.variant] if cmd == "convert" else (TRADEOFF_ALT if args.alt else TRADEOFF)
        return "convert", {"protocol": args.protocol, "params": params, "variant": variant,
                           "k": args.k, "seed": args.seed, "tol": RESTORE_TOL if args.tol is None else args.tol}
    if cmd == "reuse":
        return "reuse", {"protocol": args.protocol, "params": params, "rounds": args.rounds,
                         "seed": args.seed, "tol": RESTORE_TOL if args.tol is None else args.tol}
    if params:
        raise UsageError("channel takes no --params")
    return "channel", {"code": args.code, "n": args.n, "mutual_info": not args.no_mi and args.n <= 2,
                       "seed": args.seed, "tol": CHOI_TOL if args.tol is None else args.tol}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "list-protocols":
            for key, (_, desc, theory) in REGISTRY.items():
                print(f"{key:26s} {desc}" + (f" [free set: {theory}]" if theory else ""))
            return EXIT_OK
        if args.command == "verify":
            return cmd_verify(args.report)
        command, cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        doc, proto_doc = _compute(command, cfg, args.out)
        return _emit(doc, proto_doc, args.out)
    except DimensionCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except UnknownProtocolError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, CatalysisError, ChannelCatalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
