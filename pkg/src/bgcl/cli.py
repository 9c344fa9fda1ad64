"""``bgcl`` command-line entry point.

Subcommands follow the experiment pipeline: synth -> train -> embed ->
classify, plus the two uncertainty evaluations pavpu and astd. Every
subcommand is a pure function of its inputs and seed.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field


from . import __version__
from ._accel import set_threads
from .downstream import (deterministic_embed, mc_logreg_train, mc_predict, sample_embeddings,
                         save_embeddings)
from .encoder import CheckpointError, checkpoint_bytes, load_checkpoint
from .evalmetrics import (accuracy, noise_experiment, pavpu_protocol, predictive_entropy,
                          write_summary)
from .graphdata import GraphFormatError, generate_sbm, load_graph, save_graph
from .trainer import ConfigError, RunConfig, TrainingAborted, train

log = logging.getLogger("bgcl")

MANIFEST = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: list
    seed: int
    version: str = __version__
    checksums: dict = field(default_factory=dict)

    def write(self, out_dir):
        write_summary(os.path.join(out_dir, MANIFEST), asdict(self))

    def finalize(self, out_dir):
        for name in self.outputs:
            with open(os.path.join(out_dir, name), "rb") as fh:
                self.checksums[name] = hashlib.sha256(fh.read()).hexdigest()
        self.write(out_dir)


class CliError(RuntimeError):
    pass


def _setup_logging():
    level = os.environ.get("BGCL_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise CliError(f"BGCL_LOG must be one of error, info, debug (got {level!r})")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _begin(args, command, config, inputs, outputs, seed):
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(command, config, inputs, sorted(outputs), int(seed))
    manifest.write(args.out)
    return manifest


def _path(out, name):
    return os.path.join(out, name)


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise CliError(f"{what} directory not found: {path}")


def _load_ckpt(path):
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _load_data(path, ckpt=None):
    _require_dir(path, "data")
    g = load_graph(path)
    if ckpt is not None and ckpt.params.dims[0] != g.n_features:
        raise CliError(f"checkpoint expects {ckpt.params.dims[0]} features but {path} has "
                       f"{g.n_features}; use the dataset the model was trained on")
    return g


def _require_labels(g):
    if g.labels is None or "train" not in g.splits or g.splits["train"].size == 0:
        raise CliError("this command needs labels and a non-empty train split")


def _write_rows(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    seed = 0 if args.seed is None else args.seed
    outputs = ["edges.tsv", "features.csv", "labels.csv", "splits.json"]
    config = {"blocks": args.blocks, "nodes_per_block": args.nodes_per_block, "p_in": args.p_in,
              "p_out": args.p_out, "feature_dim": args.feature_dim, "signal": args.signal}
    m = _begin(args, "synth", config, {}, outputs, seed)
    g = generate_sbm(args.nodes_per_block, args.blocks, args.p_in, args.p_out, args.feature_dim,
                     args.signal, seed)
    save_graph(g, args.out)
    m.finalize(args.out)


def _run_config(args):
    if args.config and not os.path.isfile(args.config):
        raise CliError(f"config not found: {args.config}")
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.wd_scope is not None:
        cfg.wd_scope = args.wd_scope
    cfg.validate()
    return cfg


def cmd_train(args):
    cfg = _run_config(args)
    g = _load_data(args.data)
    outputs = ["model.bgcl", "log.jsonl"]
    m = _begin(args, "train", cfg.to_json(), {"data": args.data, "config": args.config},
               outputs, cfg.seed)
    with open(_path(args.out, "log.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        def emit(rec):
            fh.write(json.dumps(rec.to_json(timing=args.timing), sort_keys=True) + "\n")
        try:
            result = train(g, cfg, on_record=emit)
        except TrainingAborted as exc:
            with open(_path(args.out, "model.bgcl"), "wb") as out:
                out.write(exc.result.checkpoint())
            raise CliError(f"training aborted ({exc}); last good state saved to model.bgcl") from None
    with open(_path(args.out, "model.bgcl"), "wb") as fh:
        fh.write(result.checkpoint())
    m.finalize(args.out)


def cmd_embed(args):
    seed = 0 if args.seed is None else args.seed
    ckpt = _load_ckpt(args.checkpoint)
    g = _load_data(args.data, ckpt)
    m = _begin(args, "embed", {"mode": args.mode, "samples": args.samples},
               {"checkpoint": args.checkpoint, "data": args.data}, ["embeddings.bgce"], seed)
    if args.mode == "deterministic":
        data = deterministic_embed(ckpt, g)[None]
    else:
        data = sample_embeddings(ckpt, g, args.samples, seed).data
    save_embeddings(_path(args.out, "embeddings.bgce"), data)
    m.finalize(args.out)


def cmd_classify(args):
    seed = 0 if args.seed is None else args.seed
    ckpt = _load_ckpt(args.checkpoint)
    g = _load_data(args.data, ckpt)
    _require_labels(g)
    config = {"mode": args.mode, "k": args.k, "samples": args.samples, "mixture": args.mixture}
    m = _begin(args, "classify", config, {"checkpoint": args.checkpoint, "data": args.data},
               ["predictions.csv", "summary.json"], seed)
    train_nodes = g.splits["train"]
    if args.mode == "deterministic":
        H = deterministic_embed(ckpt, g)[None]
        W = mc_logreg_train(H[:, train_nodes], g.labels[train_nodes], 1, seed=seed,
                            n_classes=g.n_classes)
        probs = mc_predict(H, W)
    else:
        # prediction samples k .. k+samples-1 stay disjoint from the training ones
        H_train = sample_embeddings(ckpt, g, args.k, seed).data
        W = mc_logreg_train(H_train[:, train_nodes], g.labels[train_nodes], args.k, seed=seed,
                            n_classes=g.n_classes, mixture=args.mixture)
        probs = mc_predict(sample_embeddings(ckpt, g, args.samples, seed, start=args.k), W)
    pred = probs.argmax(axis=1)
    ent = predictive_entropy(probs)
    rows = [["node", "predicted", "label", "entropy"] + [f"p{c}" for c in range(probs.shape[1])]]
    for v in range(g.n_nodes):
        rows.append([v, int(pred[v]), int(g.labels[v]), repr(float(ent[v]))]
                    + [repr(float(p)) for p in probs[v]])
    _write_rows(_path(args.out, "predictions.csv"), rows)
    summary = {"mode": args.mode}
    for split, nodes in sorted(g.splits.items()):
        nodes = nodes[g.labels[nodes] >= 0]
        if nodes.size:
            summary[f"accuracy_{split}"] = accuracy(pred, g.labels, nodes)
    write_summary(_path(args.out, "summary.json"), summary)
    m.finalize(args.out)


def cmd_pavpu(args):
    seed = 0 if args.seed is None else args.seed
    ckpt = _load_ckpt(args.checkpoint)
    g = _load_data(args.data, ckpt)
    _require_labels(g)
    m = _begin(args, "pavpu", {"samples": args.samples},
               {"checkpoint": args.checkpoint, "data": args.data},
               ["pavpu.csv", "summary.json"], seed)
    report = pavpu_protocol(ckpt, g, seed, n_samples=args.samples)
    report.write_csv(_path(args.out, "pavpu.csv"))
    write_summary(_path(args.out, "summary.json"), report.summary())
    m.finalize(args.out)


def cmd_astd(args):
    seed = 0 if args.seed is None else args.seed
    ckpt = _load_ckpt(args.checkpoint)
    g = _load_data(args.data, ckpt)
    _require_labels(g)
    if not 0 < args.noise_nodes <= g.n_nodes:
        raise CliError(f"--noise-nodes must lie in [1, {g.n_nodes}]")
    cfg = RunConfig.from_json(ckpt.config)
    config = {"sigma": args.sigma, "noise_nodes": args.noise_nodes, "samples": args.samples,
              "k_max": args.k_max, "train": cfg.to_json()}
    m = _begin(args, "astd", config, {"checkpoint": args.checkpoint, "data": args.data},
               ["astd.csv", "summary.json", "noisy_model.bgcl"], seed)
    exp = noise_experiment(g, cfg, args.noise_nodes, args.sigma, seed, k_max=args.k_max,
                           S=args.samples, clean_ckpt=ckpt)
    exp.table.write_csv(_path(args.out, "astd.csv"))
    with open(_path(args.out, "noisy_model.bgcl"), "wb") as fh:
        fh.write(checkpoint_bytes(exp.noisy_ckpt.params, exp.noisy_ckpt.aug,
                                  exp.noisy_ckpt.n_blocks, exp.noisy_ckpt.config))
    write_summary(_path(args.out, "summary.json"), {
        "noised_nodes": [int(v) for v in exp.noised],
        "mean_astd_diff": exp.table.summary(),
        "entropy_gap": exp.entropy_gap(),
    })
    m.finalize(args.out)


# ---------------------------------------------------------------- parser

def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    p = argparse.ArgumentParser(prog="bgcl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"bgcl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, checkpoint=False):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=_seed, default=None)
        sp.add_argument("--threads", type=_positive_int, default=1)
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    s = sub.add_parser("synth", help="write a stochastic block model dataset")
    common(s, data=False)
    s.add_argument("--blocks", type=_positive_int, default=3)
    s.add_argument("--nodes-per-block", type=_positive_int, default=100)
    s.add_argument("--p-in", type=float, default=0.1)
    s.add_argument("--p-out", type=float, default=0.01)
    s.add_argument("--feature-dim", type=_positive_int, default=32)
    s.add_argument("--signal", type=float, default=2.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train an encoder")
    common(s)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int, default=None, help="override the config epoch count")
    s.add_argument("--wd-scope", choices=("all", "encoder-only"), default=None)
    s.add_argument("--timing", action="store_true", help="log wall-clock time per epoch")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="write Monte-Carlo or deterministic embeddings")
    common(s, checkpoint=True)
    s.add_argument("--samples", type=_positive_int, default=500)
    s.add_argument("--mode", choices=("bayesian", "deterministic"), default="bayesian")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("classify", help="fit and apply the linear classifier")
    common(s, checkpoint=True)
    s.add_argument("--k", type=_positive_int, default=10, help="training mixture size")
    s.add_argument("--samples", type=_positive_int, default=10, help="prediction samples")
    s.add_argument("--mixture", choices=("node", "dataset"), default="node")
    s.add_argument("--mode", choices=("bayesian", "deterministic"), default="bayesian")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("pavpu", help="PAVPU over certainty thresholds")
    common(s, checkpoint=True)
    s.add_argument("--samples", type=_positive_int, default=500)
    s.set_defaults(func=cmd_pavpu)

    s = sub.add_parser("astd", help="noise injection and k-hop ASTD differences")
    common(s, checkpoint=True)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--noise-nodes", type=_positive_int, default=10)
    s.add_argument("--samples", type=_positive_int, default=50)
    s.add_argument("--k-max", type=int, default=3)
    s.set_defaults(func=cmd_astd)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _setup_logging()
        set_threads(args.threads)
        args.func(args)
    except (CliError, ConfigError, GraphFormatError, CheckpointError, TrainingAborted,
            OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"bgcl {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
