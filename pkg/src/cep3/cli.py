"""Batch command-line interface.

Every command accepts ``--seed``, ``--config`` and ``--out`` and writes a
``manifest.json`` into its output directory.  Failures exit with

    0 ok, 1 usage error, 2 data error, 3 runtime error

and print one line to stderr:  ``error code=<n> kind=<kind> reason="<text>"``.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ctdg import (CommunityAssignment, DataError, EventStream, SplitSpec, TemporalGraph,
                   chronological_split, ingest_events, rescale_times, split_metadata,
                   synthesize_edge_features)
from .synth import PRESETS

log = logging.getLogger("cep3")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

MODEL_KINDS = ("cep3", "cep3-noar", "cep3-joint", "rmtpp", "rmtpp-hrchy", "gru", "poisson", "hawkes")
NEURAL_KINDS = MODEL_KINDS[:6]

# Flat configuration; see README for the small-run overrides.
DEFAULTS: dict = {
    "hidden_dim": 100,
    "forecaster_hidden": 50,
    "heads": 4,
    "hops": 2,
    "fanout": 15,
    "time_dim": 16,
    "mp_layers": 1,
    "edge_time": True,
    "mask_self_loops": False,
    "literal_first_dt": False,
    "pair_budget": 1 << 20,
    "lr": 1e-4,
    "epochs": 100,
    "K": 200,
    "parallel_windows": 1,
    "clip_norm": 5.0,
    "checkpoint_every": 0,
    "embed_dim": 32,
    "rnn_hidden": 64,
    "context": 32,
    "hawkes_beta": 1.0,
    "smoothing": 0.5,
    "resolution": 1.0,
    "train_frac": 0.7,
    "val_frac": 0.15,
    "test_frac": 0.15,
    "time_span": 1000.0,
}

FORMATS = """\
file formats
  events CSV        header source,dest,time[,f0,f1,...]; one event per row, UTF-8, LF
  stream directory  events.csv (compact ids, rescaled time), stream.json (node_count,
                    node_ids, time_offset, time_scale; raw = time / time_scale + time_offset),
                    split.json (fractions, boundary indices, rescaling)
  communities CSV   header node,community (original node ids)
  model directory   model.json (kind, config, node_count, feature_dim, seed) plus
                    model.bin (parameter container) or model.csv (u,v,lambda | u,v,mu,alpha)
  parameter file    bytes 0-7 b"CEP3PSET" | 8-11 uint32 LE version (1) |
                    12-19 uint64 LE manifest length M | 20..20+M UTF-8 JSON manifest
                    {"version", "seed", "arrays": [{name, shape, dtype: "float32",
                    offset, count, init}]} | float32 LE C-order payload, arrays in
                    manifest order, offset in bytes from the payload start
  loss trace CSV    epoch,batch,time_nll,entity_nll,total
  forecast CSV      step,source,dest,dt,t_abs (original ids, raw time units)
  report            report.json and report.csv (community,pp,mae,k_effective)
  viz CSV           rank,source,dest,frequency,probability
  scaling CSV       size,head,ns_per_step
  manifest.json     command, argv, config, seed, inputs, outputs (sha256), wall_clock_s
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# manifest and config


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int
    inputs: dict[str, str]
    outputs: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    wall_clock_s: float = 0.0

    def finalize(self, out: Path, t0: float) -> None:
        self.wall_clock_s = time.time() - t0
        self.outputs = {}
        for p in sorted(out.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                self.outputs[str(p.relative_to(out))] = hashlib.sha256(p.read_bytes()).hexdigest()
        (out / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def load_config(path: str | None) -> dict:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"config {path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(doc, dict):
        raise DataError(f"config {path}: expected a flat JSON object")
    for k, v in doc.items():
        if k not in DEFAULTS:
            raise UsageError(f"config {path}: unknown key {k!r}")
        if isinstance(v, (dict, list)):
            raise DataError(f"config {path}: value of {k!r} must be a scalar")
        cfg[k] = type(DEFAULTS[k])(v) if not isinstance(DEFAULTS[k], bool) else bool(v)
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    for key, attr in (("epochs", "epochs"), ("lr", "lr"), ("K", "K"),
                      ("parallel_windows", "parallel_windows"),
                      ("checkpoint_every", "checkpoint_every")):
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# stream and model I/O


def save_stream_dir(stream: EventStream, out: Path, spec: SplitSpec) -> None:
    with open(out / "events.csv", "w", newline="\n") as fh:
        stream.to_csv(fh, original_ids=False, raw_time=False)
    meta = {"node_count": stream.node_count, "feature_dim": stream.feature_dim,
            "node_ids": stream.meta.get("node_ids"),
            "time_offset": stream.meta.get("time_offset", 0.0),
            "time_scale": stream.meta.get("time_scale", 1.0)}
    (out / "stream.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "split.json").write_text(json.dumps(split_metadata(stream, spec), indent=2) + "\n")


def load_stream(path: str, cfg: dict) -> EventStream:
    """A stream directory written by ``ingest``, or a raw events CSV."""
    p = Path(path)
    if p.is_dir():
        meta_path = p / "stream.json"
        if not meta_path.exists():
            raise DataError(f"{p}: not a stream directory (missing stream.json)")
        meta = json.loads(meta_path.read_text())
        with open(p / "events.csv") as fh:
            raw = ingest_events(fh, compact_ids=False)
        m = {k: meta[k] for k in ("node_ids", "time_offset", "time_scale") if meta.get(k) is not None}
        return EventStream(raw.src, raw.dst, raw.t, raw.features, int(meta["node_count"]), m)
    if not p.exists():
        raise DataError(f"{p}: no such file")
    with open(p) as fh:
        stream = ingest_events(fh)
    return rescale_times(stream, cfg["time_span"])


def load_communities(path: str, stream: EventStream) -> CommunityAssignment:
    with open(path) as fh:
        comm = CommunityAssignment.from_csv(fh, stream)
    missing = set(range(stream.node_count)) - set(comm.community_of)
    if missing:
        # nodes absent from the file become singleton communities
        labels = dict(comm.community_of)
        nxt = len(comm.communities)
        for v in sorted(missing):
            labels[v] = nxt
            nxt += 1
        comm = CommunityAssignment.from_labels(labels)
    return comm


def split_spec(cfg: dict) -> SplitSpec:
    return SplitSpec(cfg["train_frac"], cfg["val_frac"], cfg["test_frac"])


def build_model(kind: str, cfg: dict, node_count: int, feature_dim: int, seed: int):
    from .baselines import GRUGaussianConfig, GRUGaussianModel, RMTPPConfig, RMTPPModel
    from .model import CEP3, CEP3Config

    if kind.startswith("cep3"):
        mc = CEP3Config(hidden_dim=cfg["hidden_dim"], forecaster_hidden=cfg["forecaster_hidden"],
                        heads=cfg["heads"], hops=cfg["hops"], fanout=cfg["fanout"],
                        time_dim=cfg["time_dim"], feature_dim=feature_dim, mp_layers=cfg["mp_layers"],
                        hierarchical=kind != "cep3-joint",
                        ar_mode="incident" if kind == "cep3-noar" else "full",
                        mask_self_loops=cfg["mask_self_loops"], literal_first_dt=cfg["literal_first_dt"],
                        pair_budget=cfg["pair_budget"], edge_time=cfg["edge_time"])
        m = CEP3(mc, seed)
        m.name = kind
        return m
    if kind in ("rmtpp", "rmtpp-hrchy"):
        return RMTPPModel(RMTPPConfig(node_count, cfg["embed_dim"], cfg["rnn_hidden"],
                                      kind == "rmtpp-hrchy", cfg["context"], cfg["pair_budget"]), seed)
    if kind == "gru":
        return GRUGaussianModel(GRUGaussianConfig(node_count, cfg["embed_dim"], cfg["rnn_hidden"],
                                                  cfg["context"]), seed)
    raise UsageError(f"unknown model kind {kind!r}")


def load_model(model_dir: str):
    from .baselines import HawkesModel, PoissonModel

    d = Path(model_dir)
    if not (d / "model.json").exists():
        raise DataError(f"{d}: not a model directory (missing model.json)")
    info = json.loads((d / "model.json").read_text())
    kind = info["kind"]
    if kind == "poisson":
        with open(d / "model.csv") as fh:
            return PoissonModel.from_csv(fh)
    if kind == "hawkes":
        with open(d / "model.csv") as fh:
            return HawkesModel.from_csv(fh)
    cfg = dict(DEFAULTS)
    cfg.update(info["config"])
    m = build_model(kind, cfg, int(info["node_count"]), int(info["feature_dim"]), int(info["seed"]))
    m.load(d / "model.bin")
    return m


def _time_map(stream: EventStream):
    off = stream.meta.get("time_offset", 0.0)
    scale = stream.meta.get("time_scale", 1.0)
    return lambda dt, t_abs: (dt / scale, t_abs / scale + off)


def _pick_nodes(args, stream: EventStream, comm: CommunityAssignment) -> list[int]:
    if args.nodes:
        lookup = None
        if stream.meta.get("node_ids") is not None:
            lookup = {int(o): i for i, o in enumerate(stream.meta["node_ids"])}
        out = []
        for tok in args.nodes.split(","):
            v = int(tok)
            if lookup is not None:
                if v not in lookup:
                    raise DataError(f"unknown node {v}")
                v = lookup[v]
            out.append(v)
        return sorted(set(out))
    if not 0 <= args.community < len(comm.communities):
        raise DataError(f"community {args.community} does not exist ({len(comm.communities)} communities)")
    return comm.members(args.community)


def _horizon(args, stream: EventStream) -> float:
    if args.at is None:
        return float(stream.t[-1]) + 1e-9
    off = stream.meta.get("time_offset", 0.0)
    scale = stream.meta.get("time_scale", 1.0)
    return (float(args.at) - off) * scale


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg, out: Path) -> dict:
    with open(args.input) as fh:
        stream = ingest_events(fh)
    if args.features:
        stream = synthesize_edge_features(stream)
    if not args.no_rescale:
        stream = rescale_times(stream, cfg["time_span"])
    save_stream_dir(stream, out, split_spec(cfg))
    print(f"events={len(stream)} nodes={stream.node_count} feature_dim={stream.feature_dim}")
    return {"input": args.input}


def cmd_communities(args, cfg, out: Path) -> dict:
    from .community import detect_communities_louvain

    stream = load_stream(args.stream, cfg)
    source = stream if args.full_stream else chronological_split(stream, split_spec(cfg))[0]
    comm = detect_communities_louvain(source, cfg["resolution"], stream.node_count)
    with open(out / "communities.csv", "w", newline="\n") as fh:
        comm.to_csv(fh, stream)
    sizes = sorted((len(c) for c in comm.communities), reverse=True)
    print(f"communities={len(sizes)} largest={sizes[0] if sizes else 0}")
    return {"stream": args.stream}


def cmd_simulate(args, cfg, out: Path) -> dict:
    from .synth import GroundTruthSpec, community_preset, simulate

    if args.spec:
        spec = GroundTruthSpec.from_json(Path(args.spec).read_text())
        spec.seed = args.seed
    else:
        kw = dict(PRESETS[args.preset])
        for key in ("rate", "alpha", "beta"):
            if getattr(args, key) is not None:
                kw[key] = getattr(args, key)
        spec = community_preset(n_communities=args.n_communities, size=args.size,
                                horizon=args.horizon, seed=args.seed, **kw)
    stream = simulate(spec)
    with open(out / "events.csv", "w", newline="\n") as fh:
        stream.to_csv(fh)
    (out / "spec.json").write_text(spec.to_json() + "\n")
    if spec.communities:
        labels = {v: q for q, c in enumerate(spec.communities) for v in c}
        for v in spec.nodes:
            labels.setdefault(v, len(spec.communities) + v)
        with open(out / "communities.csv", "w", newline="\n") as fh:
            CommunityAssignment.from_labels(labels).to_csv(fh)
    print(f"events={len(stream)} pairs={len(spec.pairs)}")
    return {"spec": args.spec} if args.spec else {}


def cmd_train(args, cfg, out: Path) -> dict:
    from .baselines import fit_hawkes, fit_poisson
    from .training import TrainConfig, Trainer
    from .windows import make_windows

    stream = load_stream(args.stream, cfg)
    comm = load_communities(args.communities, stream)
    train, val, _ = chronological_split(stream, split_spec(cfg))
    if len(train) < 2:
        raise DataError("training split needs at least two events")
    info = {"kind": args.model, "config": cfg, "node_count": stream.node_count,
            "feature_dim": stream.feature_dim, "seed": args.seed}
    if args.model in ("poisson", "hawkes"):
        if args.model == "poisson":
            model = fit_poisson(train, smoothing=cfg["smoothing"])
        else:
            model = fit_hawkes(train, beta=cfg["hawkes_beta"], smoothing=cfg["smoothing"])
        with open(out / "model.csv", "w", newline="\n") as fh:
            model.to_csv(fh)
        (out / "model.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        print(f"model={args.model} pairs={len(getattr(model, 'rates', getattr(model, 'params', {})))}")
        return {"stream": args.stream, "communities": args.communities}

    model = build_model(args.model, cfg, stream.node_count, stream.feature_dim, args.seed)
    tc = TrainConfig(epochs=cfg["epochs"], lr=cfg["lr"], K=cfg["K"],
                     parallel_windows=cfg["parallel_windows"], seed=args.seed,
                     clip_norm=cfg["clip_norm"], checkpoint_every=cfg["checkpoint_every"])
    graph = TemporalGraph(train)
    windows = make_windows(train, comm, tc.K)
    val_pair = None
    if args.validate and len(val):
        val_pair = (TemporalGraph(EventStream.concat([train, val])),
                    make_windows(val, comm, tc.K, start_time=float(train.t[-1])))
    ckpt_dir = out / "checkpoints"

    def checkpoint(ep):
        ckpt_dir.mkdir(exist_ok=True)
        model.save(ckpt_dir / f"epoch_{ep + 1:04d}.bin")

    trainer = Trainer(model, tc)
    try:
        history = trainer.fit(graph, windows, val=val_pair, checkpoint=checkpoint)
    finally:
        trainer.close()
    model.save(out / "model.bin")
    (out / "model.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    with open(out / "trace.csv", "w", newline="\n") as fh:
        trainer.write_trace(fh)
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n")
    last = history[-1]["train_loss"] if history else math.nan
    print(f"model={args.model} epochs={len(history)} windows={len(windows)} final_loss={last:.6f}")
    return {"stream": args.stream, "communities": args.communities}


def cmd_evaluate(args, cfg, out: Path) -> dict:
    from .evaluation import evaluate_model

    stream = load_stream(args.stream, cfg)
    comm = load_communities(args.communities, stream)
    model = load_model(args.model_dir)
    train, val, test = chronological_split(stream, split_spec(cfg))
    target = test if args.split == "test" else val
    if len(target) == 0:
        raise DataError(f"{args.split} split is empty")
    visible = stream if args.split == "test" else EventStream.concat([train, val])
    report = evaluate_model(model, TemporalGraph(visible), target, comm, cfg["K"],
                            workers=args.workers,
                            metadata={"split": args.split, "seed": args.seed, "model_dir": args.model_dir})
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    print(f"PP={report.mean_pp:.4f} MAE={report.mean_mae:.6f} communities={len(report.per_community)} "
          f"floor_hits={report.floor_hits}")
    return {"stream": args.stream, "communities": args.communities, "model_dir": args.model_dir}


def cmd_forecast(args, cfg, out: Path) -> dict:
    from .forecaster import write_forecast_csv

    stream = load_stream(args.stream, cfg)
    comm = load_communities(args.communities, stream)
    model = load_model(args.model_dir)
    nodes = _pick_nodes(args, stream, comm)
    t_n = _horizon(args, stream)
    rng = np.random.default_rng(args.seed)
    steps = model.forecast(TemporalGraph(stream), nodes, t_n, cfg["K"], args.mode, rng)
    orig = [dict(s.__dict__) for s in steps]
    mapped = []
    for s in steps:
        s2 = type(s)(**{**s.__dict__, "source": stream.original_id(s.source),
                        "dest": stream.original_id(s.dest)})
        mapped.append(s2)
    with open(out / "forecast.csv", "w", newline="\n") as fh:
        write_forecast_csv(mapped, fh, _time_map(stream))
    if args.distributions:
        doc = [{"step": i + 1, "p_source": o["p_source"].tolist(), "p_dest": o["p_dest"].tolist(),
                "nodes": [stream.original_id(v) for v in nodes]} for i, o in enumerate(orig)]
        (out / "distributions.json").write_text(json.dumps(doc) + "\n")
    print(f"steps={len(steps)} nodes={len(nodes)}")
    return {"stream": args.stream, "communities": args.communities, "model_dir": args.model_dir}


def viz_frequencies(model, graph: TemporalGraph, nodes: list[int], t_n: float, K: int,
                    rollouts: int, keep: float, rng: np.random.Generator) -> list[tuple]:
    """Sampled rollouts -> (rank, u, v, count, probability) for the top ``keep`` share of pairs."""
    counts: dict[tuple[int, int], int] = {}
    total = 0
    for _ in range(rollouts):
        for s in model.forecast(graph, nodes, t_n, K, "sample", rng):
            counts[(s.source, s.dest)] = counts.get((s.source, s.dest), 0) + 1
            total += 1
    n_keep = int(math.floor(keep * len(nodes) ** 2 + 1e-9))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n_keep]
    return [(r + 1, u, v, c, c / total) for r, ((u, v), c) in enumerate(ranked)]


def cmd_export_viz(args, cfg, out: Path) -> dict:
    stream = load_stream(args.stream, cfg)
    comm = load_communities(args.communities, stream)
    model = load_model(args.model_dir)
    nodes = _pick_nodes(args, stream, comm)
    rows = viz_frequencies(model, TemporalGraph(stream), nodes, _horizon(args, stream), cfg["K"],
                           args.rollouts, args.keep, np.random.default_rng(args.seed))
    with open(out / "viz.csv", "w", newline="\n") as fh:
        fh.write("rank,source,dest,frequency,probability\n")
        for rank, u, v, c, p in rows:
            fh.write(f"{rank},{stream.original_id(u)},{stream.original_id(v)},{c},{p!r}\n")
    print(f"pairs_kept={len(rows)} candidates={len(nodes) ** 2}")
    return {"stream": args.stream, "communities": args.communities, "model_dir": args.model_dir}


def bench_heads(sizes: list[int], steps: int, hidden_dim: int = 16, time_dim: int = 8,
                seed: int = 0, repeats: int = 3) -> list[tuple[int, str, float]]:
    """Per-step greedy decode time of the hierarchical and joint heads on random states."""
    from .autodiff import ParameterSet
    from .encoder import TimeEncoder
    from .forecaster import (DestHead, ForecastHeads, IntensityHead, JointHead, SourceHead,
                             forecast_step_greedy)

    p = ParameterSet(seed)
    te = TimeEncoder(p, "time", time_dim)
    inten = IntensityHead(p, hidden_dim, hidden_dim)
    hier = ForecastHeads(inten, SourceHead(p, hidden_dim, te, hidden_dim),
                         DestHead(p, hidden_dim, te, hidden_dim))
    joint = ForecastHeads(inten, joint=JointHead(p, hidden_dim, te, hidden_dim, pair_budget=1 << 30))
    rng = np.random.default_rng(seed)
    out = []
    for n in sizes:
        H = rng.normal(size=(n, hidden_dim))
        nodes = list(range(n))
        for name, heads in (("hierarchical", hier), ("joint", joint)):
            best = math.inf
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                for _ in range(steps):
                    forecast_step_greedy(heads, H, nodes, 0.0)
                best = min(best, (time.perf_counter_ns() - t0) / steps)
            out.append((n, name, best))
    return out


def cmd_bench_scaling(args, cfg, out: Path) -> dict:
    sizes = _parse_sizes(args.sizes)
    rows = bench_heads(sizes, args.steps, args.hidden_dim, cfg["time_dim"], args.seed)
    with open(out / "scaling.csv", "w", newline="\n") as fh:
        fh.write("size,head,ns_per_step\n")
        for n, head, ns in rows:
            fh.write(f"{n},{head},{ns:.1f}\n")
    by = {(n, h): ns for n, h, ns in rows}
    ratios = [by[(n, "joint")] / by[(n, "hierarchical")] for n in sizes]
    print("ratios=" + ",".join(f"{r:.3f}" for r in ratios))
    return {}


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or any(s < 1 for s in sizes):
        raise UsageError("--sizes needs positive integers")
    return sizes


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="flat JSON object of configuration keys")
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cep3", description="Community event forecasting on temporal graphs.",
                     epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                              epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)

    p = add("ingest", "parse an events CSV into a stream directory")
    p.add_argument("--input", required=True)
    p.add_argument("--features", action="store_true", help="synthesize the 10-d edge features")
    p.add_argument("--no-rescale", action="store_true", help="keep raw timestamps")

    p = add("communities", "Louvain communities (train split unless --full-stream)")
    p.add_argument("--stream", required=True)
    p.add_argument("--full-stream", action="store_true")

    p = add("simulate", "simulate a synthetic event stream")
    p.add_argument("--preset", choices=tuple(PRESETS), default="poisson")
    p.add_argument("--spec", help="ground-truth spec JSON (overrides the preset)")
    p.add_argument("--n-communities", type=int, default=2)
    p.add_argument("--size", type=int, default=6)
    p.add_argument("--horizon", type=float, default=1000.0)
    p.add_argument("--rate", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)

    def model_inputs(p, with_model=True):
        p.add_argument("--stream", required=True)
        p.add_argument("--communities", required=True)
        if with_model:
            p.add_argument("--model-dir", required=True)

    p = add("train", "train a model (or fit a classical baseline)")
    model_inputs(p, with_model=False)
    p.add_argument("--model", choices=MODEL_KINDS, default="cep3")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--parallel-windows", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--validate", action="store_true", help="report validation loss every epoch")

    p = add("evaluate", "perplexity and MAE per community")
    model_inputs(p)
    p.add_argument("--K", type=int)
    p.add_argument("--split", choices=("test", "val"), default="test")
    p.add_argument("--workers", type=int, default=1)

    for name, text in (("forecast", "free-running forecast of the next K events"),
                       ("export-viz", "edge frequencies from sampled rollouts")):
        p = add(name, text)
        model_inputs(p)
        p.add_argument("--community", type=int, default=0)
        p.add_argument("--nodes", help="comma-separated original node ids (overrides --community)")
        p.add_argument("--K", type=int)
        p.add_argument("--at", type=float, help="forecast horizon in raw time (default: end of stream)")
        if name == "forecast":
            p.add_argument("--mode", choices=("mean", "sample"), default="mean")
            p.add_argument("--distributions", action="store_true")
        else:
            p.add_argument("--rollouts", type=int, default=3)
            p.add_argument("--keep", type=float, default=0.33)

    p = add("bench-scaling", "decode cost of joint vs hierarchical heads")
    p.add_argument("--sizes", default="32,128,512")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--hidden-dim", type=int, default=16)
    return parser


COMMANDS = {
    "ingest": cmd_ingest, "communities": cmd_communities, "simulate": cmd_simulate,
    "train": cmd_train, "evaluate": cmd_evaluate, "forecast": cmd_forecast,
    "export-viz": cmd_export_viz, "bench-scaling": cmd_bench_scaling,
}


def _validate(args) -> None:
    for name in ("epochs", "checkpoint_every"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 0")
    for name in ("K", "parallel_windows", "rollouts", "steps", "workers", "hidden_dim",
                 "n_communities", "size"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if getattr(args, "lr", None) is not None and not args.lr > 0:
        raise UsageError("--lr must be positive")
    if getattr(args, "keep", None) is not None and not 0 < args.keep <= 1:
        raise UsageError("--keep must lie in (0, 1]")
    if getattr(args, "horizon", None) is not None and not args.horizon > 0:
        raise UsageError("--horizon must be positive")
    if args.command == "bench-scaling":
        _parse_sizes(args.sizes)
    out = Path(args.out).resolve()
    for name in ("input", "stream", "communities", "model_dir", "spec", "config"):
        v = getattr(args, name, None)
        if v is None:
            continue
        if not Path(v).exists():
            raise UsageError(f"--{name.replace('_', '-')} {v}: no such file or directory")
        if Path(v).resolve() == out:
            raise UsageError(f"--out must differ from --{name.replace('_', '-')}")


def _fail(code: int, kind: str, reason) -> int:
    text = " ".join(str(reason).split()).replace('"', "'")
    print(f'error code={code} kind={kind} reason="{text}"', file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        cfg = _apply_overrides(load_config(args.config), args)
    except UsageError as e:
        return _fail(EXIT_USAGE, "usage", e)
    except DataError as e:
        return _fail(EXIT_DATA, "data", e)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, argv, cfg, args.seed, {},
                               started_at=_dt.datetime.now(_dt.timezone.utc).isoformat())
        manifest.inputs = COMMANDS[args.command](args, cfg, out) or {}
        manifest.finalize(out, t0)
    except UsageError as e:
        return _fail(EXIT_USAGE, "usage", e)
    except (DataError, ValueError, KeyError, json.JSONDecodeError, UnicodeDecodeError) as e:
        return _fail(EXIT_DATA, "data", e)
    except OSError as e:
        return _fail(EXIT_DATA, "data", e)
    except Exception as e:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, "runtime", f"{type(e).__name__}: {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
