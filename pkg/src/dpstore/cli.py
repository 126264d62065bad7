"""Command-line front end.

One entry point (``dpstore``) with a subcommand per component:

    serve     run the block-store service
    dpir      stateless private retrieval against a running service
    dpram     stateful private RAM client (state persisted between calls)
    dpkvs     private key-value store (local directory or remote service)
    maptool   two-choice forest load simulation
    audit     exact / Monte Carlo privacy verification
    bench     overhead measurement

Client state that must survive between invocations (stash contents, keys,
sequence counters) lives in JSON files the subcommands read and rewrite.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from fractions import Fraction

from . import audit as audit_mod
from . import bench as bench_mod
from .blockstore import (
    AeadCipher,
    BlockStoreServer,
    FileArray,
    MemoryArray,
    RemoteArray,
    generate_key,
)
from .dpir import DpIrParams, achieved_epsilon, compute_k, ir_query
from .dpkvs import Kvs, KvsParams, kvs_setup
from .dpram import RamClient, RamParams, RngBundle, ram_setup
from .errors import DpStoreError
from .mapping import Forest, MappingFn, layout_for


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _fraction(text: str) -> Fraction:
    return Fraction(text)


def _indices(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


# -- serve ---------------------------------------------------------------------


def cmd_serve(args) -> int:
    host, port = _host_port(args.listen)
    if args.backing:
        array = FileArray(args.backing, args.cells, args.block_size)
    else:
        array = MemoryArray(args.cells, args.block_size)
    server = BlockStoreServer(array, host, port)
    actual_host, actual_port = server.address
    print(f"serving {args.cells} cells of {args.block_size} bytes on "
          f"{actual_host}:{actual_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


# -- dpir ----------------------------------------------------------------------


def cmd_dpir_get(args) -> int:
    params = DpIrParams.for_budget(args.n, args.alpha, args.epsilon)
    host, port = _host_port(args.server)
    rng = random.SystemRandom()
    with RemoteArray(host, port, args.n, args.block_size) as store:
        if args.batch:
            for line in sys.stdin:
                line = line.strip()
                if not line:
                    continue
                result = ir_query(params, int(line), store, rng)
                print(f"{line},{'hit' if result.hit else 'miss'},{params.k}")
        else:
            result = ir_query(params, args.index, store, rng)
            if result.hit:
                print(f"hit {result.block.hex()}")
            else:
                print("miss")
    return 0


# -- dpram ---------------------------------------------------------------------


def _load_json(path: str) -> dict:
    with open(path) as handle:
        return json.load(handle)


def _save_json(path: str, data: dict) -> None:
    with open(path, "w") as handle:
        json.dump(data, handle)
        handle.write("\n")


def _ram_client_from_state(state: dict) -> tuple[RamClient, RemoteArray]:
    params = RamParams(
        n=state["n"],
        stash_threshold=state["stash_threshold"],
        block_size=state["block_size"],
    )
    key = bytes.fromhex(open(state["key_file"]).read().strip())
    cipher = AeadCipher(key)
    host, port = _host_port(state["server"])
    store = RemoteArray(host, port, params.n, params.block_size + cipher.overhead)
    client = RamClient(params, store, cipher, RngBundle.system())
    client.stash = {int(i): bytes.fromhex(h) for i, h in state["stash"].items()}
    return client, store

def _ram_save_state(path: str, state: dict, client: RamClient) -> None:
    state["stash"] = {str(i): b.hex() for i, b in client.stash.items()}
    _save_json(path, state)


def cmd_dpram_init(args) -> int:
    params = RamParams(n=args.n, stash_threshold=args.C, block_size=args.block_size)
    key = generate_key()
    with open(args.key_file, "w") as handle:
        handle.write(key.hex() + "\n")
    if args.data_file:
        raw = open(args.data_file, "rb").read()
        if len(raw) != args.n * args.block_size:
            print(f"data file must hold exactly n*block_size = "
                  f"{args.n * args.block_size} bytes", file=sys.stderr)
            return 2
        blocks = [raw[i * args.block_size:(i + 1) * args.block_size] for i in range(args.n)]
    else:
        blocks = [bytes(args.block_size)] * args.n
    cipher = AeadCipher(key)
    host, port = _host_port(args.server)
    store = RemoteArray(host, port, args.n, args.block_size + cipher.overhead)
    _, client = ram_setup(blocks, params, cipher=cipher, store=store)
    state = {
        "n": args.n,
        "stash_threshold": params.stash_threshold,
        "block_size": args.block_size,
        "server": args.server,
        "key_file": args.key_file,
        "seq": 0,
        "stash": {},
    }
    _ram_save_state(args.state, state, client)
    store.close()
    print(f"initialized n={args.n} C={params.stash_threshold} "
          f"(stash holds {client.stash_size()} blocks)")
    return 0


def _dpram_op(args, op: str) -> int:
    state = _load_json(args.state)
    client, store = _ram_client_from_state(state)
    try:
        if op == "read":
            block, trace = client.read(args.index)
            print(block.hex())
        else:
            block = open(args.data_file, "rb").read()
            _, trace = client.write(args.index, block)
            print("ok")
    finally:
        store.close()
    state["seq"] += 1
    if args.audit:
        with open(args.audit, "a") as log:
            log.write(f"{state['seq']},{args.index},{op},{trace.d},{trace.o}\n")
    _ram_save_state(args.state, state, client)
    return 0


def cmd_dpram_read(args) -> int:
    return _dpram_op(args, "read")


def cmd_dpram_write(args) -> int:
    return _dpram_op(args, "write")


def cmd_dpram_stats(args) -> int:
    state = _load_json(args.state)
    params = RamParams(
        n=state["n"], stash_threshold=state["stash_threshold"], block_size=state["block_size"]
    )
    print(json.dumps({
        "n": state["n"],
        "stash_threshold": state["stash_threshold"],
        "stash_prob": str(params.p),
        "stash_size": len(state["stash"]),
        "queries_so_far": state["seq"],
    }))
    return 0


# -- dpkvs ---------------------------------------------------------------------


def _kvs_params_from_state(state: dict) -> KvsParams:
    return KvsParams.create(
        state["capacity"],
        block_size=state["block_size"],
        node_capacity=state["node_capacity"],
        phi_exponent=state["phi_exponent"],
        bucket_stash_threshold=state["bucket_stash_threshold"],
        uniform_shape=state["uniform_shape"],
    )


def _kvs_open(args, state: dict, params: KvsParams) -> Kvs:
    key = bytes.fromhex(open(state["key_file"]).read().strip())
    record = params.node_plain_size + AeadCipher.overhead
    if state.get("store_dir"):
        store = FileArray(
            os.path.join(state["store_dir"], "cells.bin"),
            params.layout.node_count,
            record,
        )
    else:
        host, port = _host_port(state["server"])
        store = RemoteArray(host, port, params.layout.node_count, record)
    kvs = Kvs(params, master_key=key, store=store)
    ram = kvs.bucket_ram
    ram.stashed = set(state["stashed"])
    ram.client_cells = {int(c): bytes.fromhex(h) for c, h in state["client_cells"].items()}
    refs: dict[int, int] = {}
    for bucket in ram.stashed:
        for cell in ram.repertoire[bucket - 1]:
            refs[cell] = refs.get(cell, 0) + 1
    ram._cell_refs = refs
    kvs.super_root = {
        bytes.fromhex(k): bytes.fromhex(v) for k, v in state["super_root"].items()
    }
    return kvs


def _kvs_save(path: str, state: dict, kvs: Kvs) -> None:
    ram = kvs.bucket_ram
    state["stashed"] = sorted(ram.stashed)
    state["client_cells"] = {str(c): b.hex() for c, b in ram.client_cells.items()}
    state["super_root"] = {k.hex(): v.hex() for k, v in kvs.super_root.items()}
    _save_json(path, state)


def _kvs_state_path(args) -> str:
    if args.store:
        return os.path.join(args.store, "state.json")
    if args.state:
        return args.state
    raise DpStoreError("give --store DIR or --state FILE")


def cmd_dpkvs_init(args) -> int:
    params = KvsParams.create(
        args.n,
        block_size=args.block_size,
        node_capacity=args.node_capacity,
        phi_exponent=args.phi_exponent,
        uniform_shape=args.uniform_shape,
    )
    key = generate_key()
    with open(args.key_file, "w") as handle:
        handle.write(key.hex() + "\n")
    state = {
        "capacity": args.n,
        "block_size": args.block_size,
        "node_capacity": args.node_capacity,
        "phi_exponent": args.phi_exponent,
        "bucket_stash_threshold": params.bucket_stash_threshold,
        "uniform_shape": args.uniform_shape,
        "key_file": args.key_file,
        "store_dir": args.store,
        "server": args.server,
        "stashed": [],
        "client_cells": {},
        "super_root": {},
    }
    record = params.node_plain_size + AeadCipher.overhead
    if args.store:
        os.makedirs(args.store, exist_ok=True)
        store = FileArray(
            os.path.join(args.store, "cells.bin"), params.layout.node_count, record
        )
    else:
        host, port = _host_port(args.server)
        store = RemoteArray(host, port, params.layout.node_count, record)
    kvs = kvs_setup(params, master_key=key, store=store)
    _kvs_save(_kvs_state_path(args), state, kvs)
    print(f"initialized capacity={args.n} buckets={params.layout.leaf_count} "
          f"nodes={params.layout.node_count} levels={params.layout.levels}")
    return 0


def _kvs_value(args) -> bytes:
    if args.value_hex:
        return bytes.fromhex(args.value_hex)
    return open(args.data_file, "rb").read()


def cmd_dpkvs_get(args) -> int:
    path = _kvs_state_path(args)
    state = _load_json(path)
    params = _kvs_params_from_state(state)
    kvs = _kvs_open(args, state, params)
    block = kvs.get(args.key)
    print("absent" if block is None else block.hex())
    _kvs_save(path, state, kvs)
    return 0


def cmd_dpkvs_put(args) -> int:
    path = _kvs_state_path(args)
    state = _load_json(path)
    params = _kvs_params_from_state(state)
    kvs = _kvs_open(args, state, params)
    kvs.put(args.key, _kvs_value(args))
    print("ok")
    _kvs_save(path, state, kvs)
    return 0


def cmd_dpkvs_stats(args) -> int:
    path = _kvs_state_path(args)
    state = _load_json(path)
    params = _kvs_params_from_state(state)
    kvs = _kvs_open(args, state, params)
    print(json.dumps(kvs.stats()))
    return 0


# -- maptool -------------------------------------------------------------------


def cmd_maptool_simulate(args) -> int:
    from .dpram import derive_seed

    layout = layout_for(args.n, args.t, args.phi_exp)
    heights = layout.levels
    print("trial,super_root_load,max_height_used," +
          ",".join(f"H_{i}" for i in range(heights)))
    failures = 0
    for trial in range(args.trials):
        rng = random.Random(derive_seed(args.seed, f"maptool-{trial}"))
        fn = MappingFn.generate(layout.leaf_count, rng)
        forest = Forest(layout, fn)
        for i in range(args.n):
            placement = forest.store(f"key-{i}", b"")
            if placement.failed:
                failures += 1
        hist = forest.level_fill_histogram()
        print(f"{trial},{len(forest.super_root)},{forest.max_height_used()},"
              + ",".join(str(h) for h in hist))
    if failures:
        print(f"placement failures: {failures}", file=sys.stderr)
        return 1
    return 0


# -- audit ---------------------------------------------------------------------


def cmd_audit_ram(args) -> int:
    n, p = args.n, args.p
    q1 = args.q
    report: dict = {"n": n, "p": str(p), "q": list(q1)}
    violations = 0
    if args.trials:
        dist1 = audit_mod.empirical_distribution(
            audit_mod.ram_trace_runner(n, p, q1), args.trials, args.seed, n, p, q1
        )
    else:
        dist1 = audit_mod.enumerate_ram(n, p, q1)
        # Cross-check the closed-form factorization on every trace.
        for trace, prob in dist1.probs.items():
            if audit_mod.ram_trace_prob(n, p, q1, trace) != prob:
                violations += 1
        report["factorization_mismatches"] = violations
    if args.q2:
        pair = audit_mod.AdjacentPair(q1, args.q2)
        if args.trials:
            dist2 = audit_mod.empirical_distribution(
                audit_mod.ram_trace_runner(n, p, args.q2), args.trials,
                args.seed + 1, n, p, args.q2,
            )
            dp = audit_mod.dp_report(dist1, dist2, eps_grid=args.eps_grid)
        else:
            dist2 = audit_mod.enumerate_ram(n, p, args.q2)
            dp = audit_mod.dp_report(dist1, dist2, eps_grid=args.eps_grid, pair=pair)
            case = audit_mod.lemma_case_audit(n, p, pair)
            report["case_audit"] = {
                "combos_checked": case.combos_checked,
                "violations": case.violations,
            }
            violations += len(case.violations)
            if dp.factor_summary:
                violations += dp.factor_summary["off_position_violations"]
                violations += dp.factor_summary["bound_violations"]
        report["dp"] = dp.to_json_dict()
    print(json.dumps(report))
    return 1 if violations else 0


def cmd_audit_ir(args) -> int:
    params = DpIrParams(n=args.n, alpha=args.alpha, k=args.k)
    lemma = audit_mod.lemma1_check(params)
    ratio = audit_mod.max_transcript_ratio(params)
    expected = (1 - params.alpha_fraction) * args.n / (params.alpha_fraction * args.k) + 1
    report = {
        "n": args.n,
        "k": args.k,
        "alpha": str(params.alpha_fraction),
        "achieved_epsilon": achieved_epsilon(params),
        "max_transcript_ratio": str(ratio),
        "ratio_matches_formula": ratio == expected,
        "lemma1_triples": lemma.triples_checked,
        "lemma1_violations": lemma.violations,
    }
    print(json.dumps(report))
    return 0 if lemma.ok and ratio == expected else 1


def cmd_audit_strawman(args) -> int:
    bound = audit_mod.strawman_delta_lower_bound(args.n)
    rows = []
    failures = 0
    for eps in args.eps_grid or [1.0, 5.0]:
        dist_other = audit_mod.strawman_membership_distribution(args.n, 2, 1)
        dist_self = audit_mod.strawman_membership_distribution(args.n, 1, 1)
        delta = audit_mod.delta_at(dist_other, dist_self, eps)
        ok = delta >= bound
        failures += not ok
        rows.append({"epsilon": eps, "delta": str(delta), "at_least_bound": ok})
    print(json.dumps({
        "n": args.n,
        "delta_lower_bound": str(bound),
        "checks": rows,
    }))
    return 1 if failures else 0


# -- bench ---------------------------------------------------------------------


def cmd_bench(args) -> int:
    store = None
    if args.server:
        host, port = _host_port(args.server)
        # Geometry must match the running service; dpir stores plain blocks.
        if args.scheme != "dpir":
            print("remote benches are supported for dpir only; run the "
                  "stateful schemes against their own init", file=sys.stderr)
            return 2
        store = RemoteArray(host, port, args.n, bench_mod.BENCH_BLOCK_SIZE)
    result = bench_mod.run_bench(
        args.scheme, workload=args.workload, n=args.n, ops=args.ops, seed=args.seed,
        store=store,
    )
    print(bench_mod.BenchResult.CSV_HEADER)
    print(result.to_csv_row())
    print(json.dumps(result.to_json_dict()))
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpstore", description=__doc__)
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("serve", help="run the block-store service")
    p.add_argument("--cells", type=int, required=True)
    p.add_argument("--block-size", type=int, required=True,
                   help="stored record size in bytes (ciphertext size for "
                        "encrypted deployments)")
    p.add_argument("--listen", default="127.0.0.1:9045")
    p.add_argument("--backing", help="file-backed storage path")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("dpir", help="stateless private retrieval")
    ir_sub = p.add_subparsers(required=True)
    g = ir_sub.add_parser("get")
    g.add_argument("--index", type=int)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--alpha", type=float, required=True)
    g.add_argument("--epsilon", type=float, required=True)
    g.add_argument("--server", required=True)
    g.add_argument("--block-size", type=int, default=1024)
    g.add_argument("--batch", action="store_true",
                   help="read one index per stdin line; emit index,hit|miss,K")
    g.set_defaults(func=cmd_dpir_get)

    p = sub.add_parser("dpram", help="stateful private RAM")
    ram_sub = p.add_subparsers(required=True)
    g = ram_sub.add_parser("init")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--C", type=int, default=None)
    g.add_argument("--server", required=True)
    g.add_argument("--key-file", required=True)
    g.add_argument("--state", required=True)
    g.add_argument("--block-size", type=int, default=1024)
    g.add_argument("--data-file")
    g.set_defaults(func=cmd_dpram_init)
    for name, fn in (("read", cmd_dpram_read), ("write", cmd_dpram_write)):
        g = ram_sub.add_parser(name)
        g.add_argument("--index", type=int, required=True)
        g.add_argument("--state", required=True)
        g.add_argument("--audit", help="append seq,query_index,op,d,o to this CSV")
        if name == "write":
            g.add_argument("--data-file", required=True)
        g.set_defaults(func=fn)
    g = ram_sub.add_parser("stats")
    g.add_argument("--state", required=True)
    g.set_defaults(func=cmd_dpram_stats)

    p = sub.add_parser("dpkvs", help="private key-value store")
    kvs_sub = p.add_subparsers(required=True)
    g = kvs_sub.add_parser("init")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--store", help="local directory backend")
    g.add_argument("--server", help="remote service host:port")
    g.add_argument("--state", help="state path (defaults to STORE/state.json)")
    g.add_argument("--key-file", required=True)
    g.add_argument("--block-size", type=int, default=1024)
    g.add_argument("--node-capacity", type=int, default=4)
    g.add_argument("--phi-exponent", type=float, default=1.5)
    g.add_argument("--uniform-shape", action="store_true")
    g.set_defaults(func=cmd_dpkvs_init)
    for name, fn in (("get", cmd_dpkvs_get), ("put", cmd_dpkvs_put)):
        g = kvs_sub.add_parser(name)
        g.add_argument("--key", required=True)
        g.add_argument("--store")
        g.add_argument("--state")
        if name == "put":
            g.add_argument("--value-hex")
            g.add_argument("--data-file")
        g.set_defaults(func=fn)
    g = kvs_sub.add_parser("stats")
    g.add_argument("--store")
    g.add_argument("--state")
    g.set_defaults(func=cmd_dpkvs_stats)

    p = sub.add_parser("maptool", help="two-choice forest simulation")
    map_sub = p.add_subparsers(required=True)
    g = map_sub.add_parser("simulate")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--t", type=int, default=4)
    g.add_argument("--phi-exp", type=float, default=1.5)
    g.add_argument("--trials", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_maptool_simulate)

    p = sub.add_parser("audit", help="privacy verification")
    audit_sub = p.add_subparsers(required=True)
    g = audit_sub.add_parser("ram")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=_fraction, required=True, help="e.g. 1/2")
    g.add_argument("--q", type=_indices, required=True, help="e.g. 1,2,1")
    g.add_argument("--q2", type=_indices)
    g.add_argument("--exact", action="store_true", default=False)
    g.add_argument("--trials", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps-grid", type=lambda s: [float(x) for x in s.split(",")])
    g.set_defaults(func=cmd_audit_ram)
    g = audit_sub.add_parser("ir")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--alpha", type=_fraction, required=True)
    g.set_defaults(func=cmd_audit_ir)
    g = audit_sub.add_parser("strawman")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--eps-grid", type=lambda s: [float(x) for x in s.split(",")])
    g.set_defaults(func=cmd_audit_strawman)

    p = sub.add_parser("bench", help="overhead measurement")
    p.add_argument("--scheme", choices=bench_mod.SCHEMES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ops", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workload", choices=bench_mod.WORKLOADS, default="uniform")
    p.add_argument("--server")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DpStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
