"""Command-line interface: ``dnsp simulate|train|eval|predict``.

Exit codes: 0 success, 2 malformed input or configuration, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path


from . import _backend
from .io import (
    FormatError,
    chain_config,
    dumps_dataset,
    dumps_model,
    load_config,
    load_dataset,
    load_model,
    mcem_config,
)
from .mcem import DivergenceError, default_architecture, initial_kernel, mcem_fit
from .model import fully_connected_architecture
from .predict import evaluate, heldout_loglik_per_event
from .simulate import RngStream, forward_sample

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_DIVERGED = 3

# stream ids keep the random streams of different commands apart
STREAM_SIMULATE, STREAM_TRAIN, STREAM_EVAL, STREAM_PREDICT = 1, 2, 3, 4

log = logging.getLogger("dnsp")


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _backend_name(cfg):
    return cfg.get("backend")


def cmd_simulate(args, cfg) -> int:
    model = load_model(args.model)
    sim = cfg.get("simulate", {})
    n = args.n if args.n is not None else sim.get("n_sequences", 1)
    T = args.T if args.T is not None else sim.get("T", 10.0)
    if n < 0 or not T > 0:
        raise FormatError("need n >= 0 and T > 0")
    rs = RngStream(_seed(args, cfg), STREAM_SIMULATE)
    sp = model.default_params
    seqs, hidden = [], []
    for i in range(n):
        state, ev = forward_sample(model.arch, sp, T, rs.generator(i))
        seqs.append(ev)
        hidden.append({f"{l},{k + 1}": state.real[(l, k)].tolist() for (l, k) in model.arch.hidden_nodes()})
    with _output(args.out) as fh:
        fh.write(dumps_dataset(seqs))
    sidecar = args.sidecar or (f"{args.out}.hidden.jsonl" if sim.get("sidecar") and args.out else None)
    if sidecar:
        Path(sidecar).write_text("".join(json.dumps(h) + "\n" for h in hidden))
    return EXIT_OK


def _training_architecture(cfg, data):
    mc = cfg.get("model", {})
    wiring = mc.get("wiring", "n-hidden")
    if wiring == "fully-connected":
        K = list(mc.get("K", [data[0].n_types, 1]))
        if K[0] != data[0].n_types:
            raise FormatError(f"model K[0] = {K[0]} but the data has {data[0].n_types} types")
        theta = initial_kernel(data)
        return fully_connected_architecture(K, theta, theta)
    return default_architecture(data, mc.get("n_hidden", 1))


def cmd_train(args, cfg) -> int:
    n_types = cfg.get("model", {}).get("n_types")
    data = load_dataset(args.data, n_types)
    if not data:
        raise FormatError("empty dataset")
    arch = _training_architecture(cfg, data)
    config = mcem_config(cfg)
    rng = RngStream(_seed(args, cfg), STREAM_TRAIN).generator()
    trace_path = args.trace or (f"{args.out}.trace.jsonl" if args.out else None)
    with _output(trace_path) as tf:
        fit = mcem_fit(data, arch, config, rng, trace_file=tf, backend=_backend_name(cfg))
    with _output(args.out) as fh:
        fh.write(dumps_model(fit))
    return EXIT_OK


def _load_eval_inputs(args):
    model = load_model(args.model)
    data = load_dataset(args.data, model.arch.K[0])
    if not data:
        raise FormatError("empty dataset")
    return model, data


def cmd_eval(args, cfg) -> int:
    model, data = _load_eval_inputs(args)
    ec = cfg.get("eval", {})
    ccfg = chain_config(ec.get("chain") or cfg.get("chain"))
    rngs = RngStream(_seed(args, cfg), STREAM_EVAL)
    total, n_events = 0.0, 0
    for i, seq in enumerate(data):
        if seq.n_events == 0:
            continue
        ll = heldout_loglik_per_event(model, seq, ccfg, rngs.generator(i), ec.get("refit_rounds", 5),
                                      backend=_backend_name(cfg))
        total += ll * seq.n_events
        n_events += seq.n_events
    if n_events == 0:
        raise FormatError("dataset has no events")
    with _output(args.out) as fh:
        fh.write(json.dumps({"loglik_per_event": total / n_events, "n_events": n_events}) + "\n")
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    model, data = _load_eval_inputs(args)
    pc = cfg.get("predict", {})
    ccfg = chain_config(pc.get("chain") or cfg.get("chain"))
    rng = RngStream(_seed(args, cfg), STREAM_PREDICT).generator()
    rmse, acc, records = evaluate(model, data, ccfg, pc.get("n_mc", 32), rng, backend=_backend_name(cfg))
    with _output(args.out) as fh:
        fh.write(json.dumps({"rmse": rmse, "accuracy": acc, "n_predictions": len(records)}) + "\n")
    rec_path = args.records or (f"{args.out}.records.jsonl" if args.out else None)
    if rec_path:
        Path(rec_path).write_text("".join(json.dumps(r.as_dict()) + "\n" for r in records))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker count; results do not depend on it (work currently runs on one thread)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dnsp", description="Deep Neyman-Scott processes")
    p.add_argument("--version", action="version", version=f"%(prog)s 0.1.0 ({_backend.BACKEND} kernel)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="forward-sample sequences from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, help="number of sequences")
    s.add_argument("--T", type=float, help="window length")
    s.add_argument("--sidecar", help="also write hidden real events here (JSON lines)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="fit a model by Monte Carlo EM")
    t.add_argument("--data", required=True)
    t.add_argument("--trace", help="training trace path (default: <out>.trace.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="held-out log-likelihood per event")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("predict", parents=[common], help="one-step-ahead next-event prediction")
    q.add_argument("--data", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--records", help="per-prediction log (default: <out>.records.jsonl)")
    q.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("dnsp: --threads must be >= 1", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (FormatError, FileNotFoundError) as exc:
        print(f"dnsp: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except DivergenceError as exc:
        print(f"dnsp: diverged: {exc}", file=sys.stderr)
        if exc.details:
            print(json.dumps(exc.details, default=str), file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
