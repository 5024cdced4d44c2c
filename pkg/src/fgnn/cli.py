"""Command-line entry point: ``fgnn <subcommand> ...``.

Subcommands: gen, infer, verify, train, eval, ldpc.  Every command takes
``--seed`` and writes to ``--out`` (stdout when omitted).  Usage errors
exit with 2, failed checks and engine/model mismatches with 1.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bp import MAX, SUM, BpConfig, decode_map_from_beliefs, run_bp
from .constructions import certify_constructions
from .datasets import KINDS, dataset_from_json, dataset_to_json, gen_synthetic_dataset, gen_tree_dataset
from .exact import StateSpaceTooLarge, exact_map, exact_marginals
from .graph import GraphError, GraphParseError, PotentialDomainError, graph_from_dict, graph_from_json
from .ldpc import (DECODERS, MODULATIONS, alist_read, alist_write, full_grid, ldpc_decode_eval, ldpc_make_code,
                   LdpcCode, rows_to_csv)
from .lowrank import ConfigurationError, DecompositionValidityError, run_lowrank_bp
from .maxdecomp import decompose_graph, run_decomposed_max_product
from .nn import ModelConfig, model_from_json, model_to_json
from .training import OptimConfig, evaluate_model, feature_sizes, maxsum_accuracy, train_map_model

ENGINES = ("exact", "sum", "max", "lowrank", "maxdecomp")


class CliError(Exception):
    """A well-formed request that cannot be carried out (exit code 1)."""


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _floats(v):
    return [float(x) for x in np.asarray(v, dtype=np.float64)]


# -- gen ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.what == "synthetic":
        data = gen_synthetic_dataset(args.kind, args.size, args.seed, n=args.n, window=args.window, k=args.k)
        meta = {"generator": "synthetic", "kind": args.kind, "size": args.size, "seed": args.seed,
                "n": args.n, "window": args.window, "k": args.k}
        _emit(dataset_to_json(data, meta), args.out)
    elif args.what == "tree":
        data = gen_tree_dataset(args.size, args.seed, (args.min_depth, args.max_depth), args.max_nodes)
        meta = {"generator": "tree", "size": args.size, "seed": args.seed,
                "depth_range": [args.min_depth, args.max_depth], "max_nodes": args.max_nodes}
        _emit(dataset_to_json(data, meta), args.out)
    else:
        code = ldpc_make_code(args.n, args.dv, args.dc, args.seed)
        _emit(alist_write(code), args.out)
    return 0


# -- infer ---------------------------------------------------------------------------

def _load_graph(path: str, index: int):
    text = _read(path)
    doc = json.loads(text)
    if isinstance(doc, dict) and "instances" in doc:
        items = doc["instances"]
        if not 0 <= index < len(items):
            raise CliError(f"instance index {index} out of range (0..{len(items) - 1})")
        return graph_from_dict(items[index]["graph"])
    return graph_from_json(text)


def cmd_infer(args) -> int:
    g = _load_graph(args.graph, args.index)
    cfg = dict(max_iterations=args.max_iterations, tol=args.tol, damping=args.damping)
    out: dict = {"engine": args.engine}
    if args.engine == "exact":
        out["marginals"] = [_floats(m) for m in exact_marginals(g)]
        mp = exact_map(g)
        out["map"] = list(mp.assignment)
        out["log_score"] = float(mp.log_score)
    else:
        if args.engine == "sum":
            res = run_bp(g, BpConfig(mode=SUM, **cfg))
        elif args.engine == "max":
            res = run_bp(g, BpConfig(mode=MAX, **cfg))
        elif args.engine == "lowrank":
            res = run_lowrank_bp(g, BpConfig(mode=SUM, **cfg))
        else:
            res = run_decomposed_max_product(decompose_graph(g), BpConfig(mode=MAX, **cfg))
        key = "marginals" if args.engine in ("sum", "lowrank") else "beliefs"
        out[key] = [_floats(b) for b in res.beliefs]
        out["map"] = list(decode_map_from_beliefs(res.beliefs))
        out["converged"] = bool(res.converged)
        out["iterations"] = int(res.iterations)
    _emit(json.dumps(out, allow_nan=False) + "\n", args.out)
    return 0


# -- verify ----------------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = certify_constructions(seed=args.seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name} max_err={err:.3e}" for name, ok, err in results]
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if all(ok for _, ok, _ in results) else 1


# -- train / eval -------------------------------------------------------------------------

def cmd_train(args) -> int:
    train = dataset_from_json(_read(args.data))
    test = dataset_from_json(_read(args.test)) if args.test else None
    vi, fi, ei = feature_sizes()
    mcfg = ModelConfig(var_in=vi, fac_in=fi, edge_in=ei, hidden=args.hidden, num_layers=args.layers,
                       aggregator=args.aggregator)
    ocfg = OptimConfig(lr=args.lr, lr_decay=args.lr_decay, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed)
    log = (lambda m: print(f"epoch {m.epoch} loss {m.train_loss:.6f} acc {m.eval_accuracy}", file=sys.stderr)) \
        if args.verbose else None
    result = train_map_model(train, mcfg, ocfg, test=test, log=log)
    _emit(model_to_json(result.model), args.out)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            fh.write(result.metrics_json())
    return 0


def cmd_eval(args) -> int:
    model = model_from_json(_read(args.model))
    data = dataset_from_json(_read(args.data))
    vi, fi, ei = feature_sizes()
    c = model.config
    if (c.var_in, c.fac_in, c.edge_in) != (vi, fi, ei):
        raise CliError("model feature sizes do not match the dataset featurization")
    out = {"instances": len(data), "fgnn_accuracy": evaluate_model(model, data)}
    if args.baseline:
        out["maxsum_accuracy"] = maxsum_accuracy(data)
    _emit(json.dumps(out, allow_nan=False) + "\n", args.out)
    return 0


# -- ldpc --------------------------------------------------------------------------------

def _parse_list(text: str, cast):
    try:
        return [cast(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def cmd_ldpc(args) -> int:
    code = LdpcCode.from_parity_matrix(alist_read(_read(args.code))) if args.code \
        else ldpc_make_code(96, 3, 6, args.seed)
    if args.grid == "full":
        grid = full_grid()
    else:
        grid = [(s, b) for s in args.snr for b in args.sigma_b]
    rows = ldpc_decode_eval(code, args.decoders, grid, args.trials, args.seed, args.modulation,
                            BpConfig(max_iterations=args.max_iterations))
    _emit(rows_to_csv(rows), args.out)
    return 0


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fgnn", description="Factor-graph inference and FGNN experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="output path (default: stdout)")

    g = sub.add_parser("gen", help="generate datasets (JSON) or an LDPC code (alist)")
    g.add_argument("what", choices=("synthetic", "tree", "ldpc"))
    g.add_argument("--kind", choices=KINDS, default="D1")
    g.add_argument("--size", type=int, default=10)
    g.add_argument("--n", type=int, default=None, help="chain length (14) or LDPC block length (96)")
    g.add_argument("--window", type=int, default=8)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--min-depth", type=int, default=3)
    g.add_argument("--max-depth", type=int, default=6)
    g.add_argument("--max-nodes", type=int, default=20)
    g.add_argument("--dv", type=int, default=3)
    g.add_argument("--dc", type=int, default=6)
    common(g)
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("infer", help="run an inference engine on a factor-graph JSON")
    i.add_argument("graph")
    i.add_argument("--engine", choices=ENGINES, default="sum")
    i.add_argument("--index", type=int, default=0, help="instance index inside a dataset file")
    i.add_argument("--max-iterations", type=int, default=100)
    i.add_argument("--tol", type=float, default=1e-9)
    i.add_argument("--damping", type=float, default=0.0)
    common(i)
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("verify", help="run the construction certifiers")
    common(v)
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train an FGNN MAP predictor")
    t.add_argument("--data", required=True)
    t.add_argument("--test", default=None)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=100)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--lr-decay", type=float, default=0.98)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--aggregator", choices=("max", "sum", "prod"), default="max")
    t.add_argument("--metrics", default=None, help="per-epoch metrics JSON path")
    t.add_argument("--verbose", action="store_true")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model against exact-MAP labels")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--baseline", action="store_true", help="also report Max-Sum agreement")
    common(e)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("ldpc", help="BER sweep of LDPC decoders, CSV output")
    d.add_argument("--code", default=None, help="alist file (default: random (96,3,6) code from --seed)")
    d.add_argument("--grid", choices=("full", "custom"), default="full")
    d.add_argument("--snr", type=lambda s: _parse_list(s, float), default=[4.0])
    d.add_argument("--sigma-b", type=lambda s: _parse_list(s, float), default=[0.0])
    d.add_argument("--trials", type=int, default=100)
    d.add_argument("--decoders", type=lambda s: _parse_list(s, str), default=list(DECODERS))
    d.add_argument("--modulation", choices=MODULATIONS, default="bpsk")
    d.add_argument("--max-iterations", type=int, default=100)
    common(d)
    d.set_defaults(func=cmd_ldpc)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "gen" and args.n is None:
        args.n = 96 if args.what == "ldpc" else 14
    if args.command == "ldpc":
        bad = [d for d in args.decoders if d not in DECODERS]
        if bad:
            parser.print_usage(sys.stderr)
            print(f"fgnn ldpc: error: unknown decoder(s) {', '.join(bad)}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (CliError, ConfigurationError, DecompositionValidityError, PotentialDomainError, StateSpaceTooLarge,
            GraphError, GraphParseError, ValueError) as exc:
        print(f"fgnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
