"""Accuracy, predictive entropy, PAVPU and ASTD."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .downstream import (EmbeddingSamples, embedding_sample, mc_logreg_train, mc_predict,
                         sample_embeddings)
from .graphdata import choose_nodes, inject_noise, khop_rings, normalize_adjacency

THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def accuracy(predicted, true, nodes=None):
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if nodes is not None:
        predicted, true = predicted[nodes], true[nodes]
    if predicted.size == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(predicted == true))


def predictive_entropy(probs):
    """Entropy of each probability row divided by ``ln C`` (so it lies in [0, 1])."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probability")
    C = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=-1)
    out = h / np.log(C)
    return float(out) if out.ndim == 0 else out


def uncertainty_counts(correct, entropies, threshold):
    correct = np.asarray(correct, dtype=bool)
    certain = np.asarray(entropies) <= threshold
    if correct.shape != certain.shape:
        raise ValueError("correctness flags and entropies differ in length")
    return {
        "n_ac": int(np.sum(correct & certain)),
        "n_au": int(np.sum(correct & ~certain)),
        "n_ic": int(np.sum(~correct & certain)),
        "n_iu": int(np.sum(~correct & ~certain)),
    }


def pavpu(correct, entropies, threshold):
    """(n_ac + n_iu) / total, with "certain" meaning entropy <= threshold."""
    c = uncertainty_counts(correct, entropies, threshold)
    total = sum(c.values())
    if total == 0:
        raise ValueError("pavpu over an empty set")
    return (c["n_ac"] + c["n_iu"]) / total


@dataclass
class UncertaintyReport:
    thresholds: list
    counts: list
    values: list
    nodes: np.ndarray
    predicted: np.ndarray
    correct: np.ndarray
    entropy: np.ndarray
    accuracy: float = 0.0

    def csv_rows(self):
        rows = [["threshold", "n_ac", "n_au", "n_ic", "n_iu", "pavpu"]]
        for t, c, v in zip(self.thresholds, self.counts, self.values):
            rows.append([f"{t:.1f}", c["n_ac"], c["n_au"], c["n_ic"], c["n_iu"], repr(float(v))])
        return rows

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())

    def summary(self):
        return {
            "accuracy": self.accuracy,
            "n_nodes": int(self.nodes.size),
            "mean_entropy": float(np.mean(self.entropy)),
            "pavpu": {f"{t:.1f}": float(v) for t, v in zip(self.thresholds, self.values)},
        }


def partition_groups(n_samples, group_size):
    """First group trains the classifier; the remaining disjoint groups predict."""
    if n_samples % group_size:
        raise ValueError("n_samples must be a multiple of group_size")
    groups = [np.arange(s, s + group_size) for s in range(0, n_samples, group_size)]
    if len(groups) < 2:
        raise ValueError("need at least one training and one evaluation group")
    return groups[0], groups[1:]


def mc_mean_probabilities(ckpt, g, seed, n_samples=500, group_size=10, epochs=150, lr=0.1,
                          train_nodes=None):
    """Per-node class probabilities averaged over the evaluation groups.

    Returns ``(mean_probs (N, C), classifier weights)``. Samples are drawn
    lazily one group at a time.
    """
    adj = normalize_adjacency(g)
    train_group, eval_groups = partition_groups(n_samples, group_size)
    train_nodes = g.splits["train"] if train_nodes is None else np.asarray(train_nodes)
    if train_nodes.size == 0:
        raise ValueError("empty train split")

    def group(idx):
        return np.stack([embedding_sample(ckpt, g, adj, int(i), seed) for i in idx])

    H_train = group(train_group)[:, train_nodes]
    W = mc_logreg_train(H_train, g.labels[train_nodes], len(train_group), epochs=epochs, lr=lr,
                        seed=seed, n_classes=g.n_classes)
    total = None
    for idx in eval_groups:
        p = mc_predict(group(idx), W)
        total = p if total is None else total + p
    return total / len(eval_groups), W


def pavpu_protocol(ckpt, g, seed, n_samples=500, group_size=10, thresholds=THRESHOLDS,
                   eval_nodes=None, mean_probs=None):
    """Sample-group PAVPU evaluation over ``eval_nodes`` (default: the test split)."""
    if n_samples < 500 and group_size == 10 and mean_probs is None:
        raise ValueError("the protocol needs 500 samples (1 training + 49 evaluation groups)")
    if g.labels is None:
        raise ValueError("graph has no labels")
    if mean_probs is None:
        mean_probs, _ = mc_mean_probabilities(ckpt, g, seed, n_samples, group_size)
    nodes = g.splits.get("test") if eval_nodes is None else np.asarray(eval_nodes)
    if nodes is None:
        nodes = np.setdiff1d(np.flatnonzero(g.labels >= 0), g.splits.get("train", []))
    probs = mean_probs[nodes]
    predicted = probs.argmax(axis=1)
    correct = predicted == g.labels[nodes]
    ent = predictive_entropy(probs)
    counts = [uncertainty_counts(correct, ent, t) for t in thresholds]
    values = [(c["n_ac"] + c["n_iu"]) / len(nodes) for c in counts]
    return UncertaintyReport(list(thresholds), counts, values, nodes, predicted, correct, ent,
                             float(np.mean(correct)))


def astd(samples, nodes=None):
    """Per node: population std over samples for each latent dim, averaged over dims."""
    H = samples.data if isinstance(samples, EmbeddingSamples) else np.asarray(samples)
    if H.shape[0] < 2:
        raise ValueError("ASTD needs at least two samples")
    if nodes is not None:
        H = H[:, nodes, :]
    return H.std(axis=0, ddof=0).mean(axis=-1)


@dataclass
class AstdTable:
    hops: list
    nodes: list
    diffs: list
    means: list = field(default_factory=list)

    def csv_rows(self):
        rows = [["hop", "n_nodes", "mean_diff", "median_diff", "min_diff", "max_diff"]]
        for k, nodes, d, m in zip(self.hops, self.nodes, self.diffs, self.means):
            if m is None:
                rows.append([k, 0, "missing", "missing", "missing", "missing"])
            else:
                rows.append([k, len(nodes), repr(float(m)), repr(float(np.median(d))),
                             repr(float(np.min(d))), repr(float(np.max(d)))])
        return rows

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())

    def summary(self):
        return {str(k): (None if m is None else float(m)) for k, m in zip(self.hops, self.means)}


def astd_khop_experiment(clean_ckpt, noisy_ckpt, clean_g, noisy_g, noised, k_max, S, seed):
    """ASTD(noisy model on noisy graph) - ASTD(clean model on clean graph) per hop ring."""
    rings = khop_rings(clean_g, noised, k_max)
    clean = astd(sample_embeddings(clean_ckpt, clean_g, S, seed))
    noisy = astd(sample_embeddings(noisy_ckpt, noisy_g, S, seed))
    diff = noisy - clean
    diffs = [diff[r] for r in rings]
    means = [float(np.mean(d)) if d.size else None for d in diffs]
    return AstdTable(list(range(k_max + 1)), rings, diffs, means)


def write_summary(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class NoiseExperiment:
    noised: np.ndarray
    table: AstdTable
    entropy: np.ndarray  # per node, noisy model on the noisy graph
    clean_ckpt: object = None
    noisy_ckpt: object = None

    def entropy_gap(self):
        """Mean entropy of noised nodes minus that of the remaining nodes."""
        mask = np.zeros(self.entropy.shape[0], dtype=bool)
        mask[self.noised] = True
        return float(self.entropy[mask].mean() - self.entropy[~mask].mean())


def noise_experiment(g, cfg, n_noise, sigma, seed, k_max=3, S=50, n_samples=100, group_size=10,
                     clean_ckpt=None):
    """Train on the clean and on a noise-injected copy of ``g``, then compare.

    Both runs share ``cfg`` (and so the same initialization seed). The noised
    node set and the noise draws derive from ``seed``.
    """
    from . import rng as rngmod
    from .encoder import parse_checkpoint
    from .trainer import train

    sub = rngmod.stream(seed, rngmod.NOISE).integers(0, 2**63 - 1, size=2)
    noised = choose_nodes(g, n_noise, int(sub[0]))
    noisy_g = inject_noise(g, noised, sigma, int(sub[1]))
    if clean_ckpt is None:
        clean_ckpt = parse_checkpoint(train(g, cfg).checkpoint())
    noisy_ckpt = parse_checkpoint(train(noisy_g, cfg).checkpoint())
    table = astd_khop_experiment(clean_ckpt, noisy_ckpt, g, noisy_g, noised, k_max, S, seed)
    probs, _ = mc_mean_probabilities(noisy_ckpt, noisy_g, seed, n_samples, group_size)
    return NoiseExperiment(noised, table, predictive_entropy(probs), clean_ckpt, noisy_ckpt)
