"""Command line entry point: ``splitshield <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback

import numpy as np

from ..attack import AttackKind, run_attack
from ..errors import SplitShieldError
from ..numerics import child_seed, make_rng
from ..psu import get_group, run_pair, run_psu
from .config import SEED_ENV, load_config
from .data import DatasetSpec, gen_dataset, write_csv
from .experiment import REPORT_COLUMNS, read_rows, report_table, run_experiment, run_sweep, write_rows
from .transport import TcpTransport, parse_address


def _add_config(p):
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. protection.L=0.3 (repeatable)")
    p.add_argument("--seed", type=int, help="global seed (also settable via %s)" % SEED_ENV)
    p.add_argument("--out", help="output directory (default: the config's output)")


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if args.seed is not None:  # the flag beats the environment
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    spec = DatasetSpec(n=args.n, d_in=args.d_in, pos_fraction=args.pos_fraction,
                       separation=args.separation, noise=args.noise, test_fraction=args.test_fraction, seed=args.seed)
    train_set, test_set = gen_dataset(spec)
    write_csv(train_set, args.out)
    print(f"wrote {len(train_set)} rows to {args.out}")
    if args.test_out:
        write_csv(test_set, args.test_out)
        print(f"wrote {len(test_set)} rows to {args.test_out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.output
    res = run_experiment(cfg, out)
    write_rows([res.summary], os.path.join(out, "summary.csv"))
    if args.dump_grads and res.report.last_batch is not None:
        g, y = res.report.last_batch
        _write_grads(args.dump_grads, g, y)
    print(f"steps: {res.steps_path}")
    print(", ".join(f"{k}={v:.4f}" for k, v in res.summary.items() if v is not None))
    return 0


def _write_grads(path, g, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *[f"g{j}" for j in range(g.shape[1])]])
        for yi, row in zip(y, g):
            w.writerow([int(yi), *map(repr, map(float, row))])


def _read_grads(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "label":
            raise ValueError(f"{path}: expected header 'label,g0,...'")
        rows = [line for line in r if line]
    y = np.array([int(line[0]) for line in rows])
    g = np.array([[float(v) for v in line[1:]] for line in rows])
    return g, y


def cmd_attack(args) -> int:
    g, y = _read_grads(args.grads)
    kind = AttackKind(args.kind, n_hints=args.hints, similarity=args.similarity) if args.kind == "hint" else AttackKind(args.kind)
    res = run_attack(kind, g, y, make_rng(args.seed))
    flag = " (degraded)" if res.degraded else ""
    print(f"leak_auc_{kind.name} = {res.leak_auc:.6f}{flag}")
    return 0


def _psu_ids(size_a: int, size_b: int, overlap: float):
    k = int(round(overlap * min(size_a, size_b)))
    ids_a = [f"id-{i:07d}" for i in range(size_a)]
    ids_b = [f"id-{i:07d}" for i in range(size_a - k, size_a - k + size_b)]
    return ids_a, ids_b


def _read_id_file(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def _write_map(path, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "uid"])
        for own_id in sorted(m.mapping):
            w.writerow([own_id, m.mapping[own_id].hex()])


def cmd_psu(args) -> int:
    if not 0 <= args.overlap <= 1:
        raise ValueError("--overlap must lie in [0, 1]")
    params = get_group(args.group)
    ids_a, ids_b = _psu_ids(args.size_a, args.size_b, args.overlap)
    seed = args.seed
    rng_a = make_rng(child_seed(seed, "psu", "active")) if seed is not None else None
    rng_p = make_rng(child_seed(seed, "psu", "passive")) if seed is not None else None
    if args.in_process:
        run = run_pair(ids_a, ids_b, params, rng_a, rng_p)
        common = set(ids_a) & set(ids_b)
        ok = (run.active.uids == run.passive.uids
              and all(run.active.mapping[i] == run.passive.mapping[i] for i in common)
              and len(run.active.uids) == len(set(ids_a) | set(ids_b)))
        print(f"|U| = {len(run.active.uids)}")
        print(f"maps consistent: {'true' if ok else 'false'}")
        if args.out:
            _write_map(args.out, run.active)
        return 0 if ok else 1
    if args.role is None or (args.listen is None) == (args.connect is None):
        raise ValueError("TCP mode needs --role and exactly one of --listen/--connect")
    if args.ids:
        own = _read_id_file(args.ids)
    else:
        own = ids_a if args.role == "active" else ids_b
    rng = rng_a if args.role == "active" else rng_p
    if args.listen:
        host, port = parse_address(args.listen)
        transport = TcpTransport.listen(host, port, timeout=args.timeout)
    else:
        host, port = parse_address(args.connect)
        transport = TcpTransport.connect(host, port, timeout=args.timeout)
    with transport:
        m = run_psu(args.role, own, params, transport, rng)
    print(f"|U| = {len(m.uids)}")
    if args.out:
        _write_map(args.out, m)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.param or args.values:
        if not (args.param and args.values):
            raise ValueError("--param and --values go together")
        from .config import parse_value, set_path, from_dict

        raw = set_path(cfg.raw, "sweep", {
            "param": args.param,
            "values": [parse_value(v) for v in args.values.split(",")],
            "seeds": [int(s) for s in (args.seeds or "0").split(",")],
        })
        cfg = from_dict(raw)
    out = args.out or cfg.output
    rows = run_sweep(cfg, out)
    print(f"{len(rows)} runs; summary: {os.path.join(out, 'summary.csv')}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for p in args.inputs:
        rows += read_rows(os.path.join(p, "summary.csv") if os.path.isdir(p) else p)
    table = report_table(rows, args.attack)
    text = write_rows([{c: r[c] for c in REPORT_COLUMNS} for r in table]) if table else ",".join(REPORT_COLUMNS) + "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitshield", description="Split-learning label leakage lab.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic two-class dataset as CSV")
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--pos-fraction", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=2.5)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one experiment")
    _add_config(p)
    p.add_argument("--dump-grads", help="write the final batch's sent gradients as CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack a dumped gradient CSV")
    p.add_argument("grads")
    p.add_argument("--kind", choices=["norm", "hint", "spectral"], default="norm")
    p.add_argument("--hints", type=int, default=5)
    p.add_argument("--similarity", choices=["inner", "cosine"], default="inner")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("psu", help="private set union between two parties")
    p.add_argument("--role", choices=["active", "passive"])
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--listen", metavar="HOST:PORT")
    mode.add_argument("--connect", metavar="HOST:PORT")
    mode.add_argument("--in-process", action="store_true", help="run both roles here and check the result")
    p.add_argument("--size-a", type=int, default=64)
    p.add_argument("--size-b", type=int, default=64)
    p.add_argument("--overlap", type=float, default=0.5, help="shared ids as a fraction of the smaller set")
    p.add_argument("--ids", help="file with one own id per line (TCP roles)")
    p.add_argument("--group", default="modp2048", help="test | toy64 | safe256 | modp2048 | <safe prime>")
    p.add_argument("--seed", type=int, help="seed exponents and shuffles (default: OS randomness)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--out", help="write own id -> uid map as CSV")
    p.set_defaults(func=cmd_psu)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    _add_config(p)
    p.add_argument("--param", help="dotted config key, e.g. protection.L")
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds (default 0)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate sweep summaries into a trade-off table")
    p.add_argument("inputs", nargs="+", help="summary.csv files or sweep output directories")
    p.add_argument("--attack", help="which leak_auc_<attack> column to report (default: first)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def _origin(err: BaseException) -> str:
    tb = traceback.extract_tb(err.__traceback__)
    if not tb:
        return "splitshield"
    return os.path.splitext(os.path.basename(tb[-1].filename))[0]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except (SplitShieldError, ValueError, OSError, KeyError) as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"splitshield: {_origin(err)}: {type(err).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
