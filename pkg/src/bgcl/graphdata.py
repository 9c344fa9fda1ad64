"""Graph container, on-disk format, adjacency normalization and fixtures."""
import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    pass


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


def canonical_edges(pairs, n_nodes):
    """Undirected, deduplicated, self-loop-free ``(E, 2)`` array with ``u < v``, sorted."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_nodes):
        raise GraphFormatError(f"edge endpoint out of range [0, {n_nodes})")
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    """Attributed undirected graph.

    ``labels`` uses -1 for unlabeled nodes. ``splits`` maps a split name to a
    sorted array of node ids.
    """

    n_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray = None
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        n = int(self.n_nodes)
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", _frozen(canonical_edges(self.edges, n), np.int64))
        feats = _frozen(self.features, np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphFormatError(f"features must have {n} rows, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise GraphFormatError("features contain non-finite values")
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = _frozen(self.labels, np.int64)
            if labels.shape != (n,):
                raise GraphFormatError(f"labels must have length {n}")
            if np.any(labels < -1):
                raise GraphFormatError("class ids must be non-negative (-1 marks unlabeled)")
            object.__setattr__(self, "labels", labels)
        splits = {}
        for name, idx in dict(self.splits).items():
            idx = np.unique(np.asarray(idx, dtype=np.int64))
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise GraphFormatError(f"split {name!r} has node ids out of range")
            splits[str(name)] = _frozen(idx, np.int64)
        object.__setattr__(self, "splits", splits)

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        if self.labels is None or not np.any(self.labels >= 0):
            return 0
        return int(self.labels.max()) + 1

    def replace(self, **changes):
        kw = dict(n_nodes=self.n_nodes, edges=self.edges, features=self.features,
                  labels=self.labels, splits=self.splits)
        kw.update(changes)
        return Graph(**kw)

    def same_as(self, other):
        if self.n_nodes != other.n_nodes:
            return False
        if not (np.array_equal(self.edges, other.edges)
                and np.array_equal(self.features, other.features)):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        if set(self.splits) != set(other.splits):
            return False
        return all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits)


# ---------------------------------------------------------------- file format

def load_graph(directory):
    """Read ``edges.tsv`` and ``features.csv`` (plus optional labels/splits)."""
    feat_path = os.path.join(directory, "features.csv")
    edge_path = os.path.join(directory, "edges.tsv")
    for p in (feat_path, edge_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing {p}")

    rows = []
    with open(feat_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                raise GraphFormatError(f"{feat_path}:{lineno}: empty feature line")
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError:
                raise GraphFormatError(f"{feat_path}:{lineno}: malformed number") from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphFormatError(
                    f"{feat_path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    n = len(rows)
    features = np.array(rows, dtype=np.float64).reshape(n, -1)

    pairs = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{edge_path}:{lineno}: expected two node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{edge_path}:{lineno}: node ids must be integers") from None
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(f"{edge_path}:{lineno}: node id out of range [0, {n})")
            pairs.append((u, v))

    labels = None
    label_path = os.path.join(directory, "labels.csv")
    if os.path.exists(label_path):
        labels = np.full(n, -1, dtype=np.int64)
        with open(label_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.strip().split(",")
                try:
                    node, cls = int(parts[0]), int(parts[1])
                except (ValueError, IndexError):
                    raise GraphFormatError(f"{label_path}:{lineno}: expected node_id,class_id") from None
                if len(parts) != 2 or not 0 <= node < n or cls < 0:
                    raise GraphFormatError(f"{label_path}:{lineno}: invalid label line")
                labels[node] = cls

    splits = {}
    split_path = os.path.join(directory, "splits.json")
    if os.path.exists(split_path):
        with open(split_path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{split_path}: {exc}") from None
        if not isinstance(raw, dict):
            raise GraphFormatError(f"{split_path}: expected an object of name -> node ids")
        splits = {k: np.asarray(v, dtype=np.int64) for k, v in raw.items()}

    return Graph(n_nodes=n, edges=np.array(pairs, dtype=np.int64).reshape(-1, 2),
                 features=features, labels=labels, splits=splits)


def save_graph(g, directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(directory, "features.csv"), "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if g.labels is not None:
        with open(os.path.join(directory, "labels.csv"), "w", encoding="utf-8", newline="\n") as fh:
            for node, cls in enumerate(g.labels):
                if cls >= 0:
                    fh.write(f"{node},{cls}\n")
    if g.splits:
        with open(os.path.join(directory, "splits.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump({k: [int(i) for i in v] for k, v in sorted(g.splits.items())}, fh)
            fh.write("\n")


# ---------------------------------------------------------------- normalization

@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Symmetric renormalized adjacency ``D^-1/2 (A + I) D^-1/2`` in CSR form.

    Entries are sorted by (row, col). ``t_perm`` lists entry ids sorted by
    (col, row) with ``t_indptr`` as its column pointer; ``reverse[e]`` is the
    id of the transposed entry.
    """

    n_nodes: int
    indptr: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    t_indptr: np.ndarray
    t_perm: np.ndarray
    reverse: np.ndarray

    @property
    def nnz(self):
        return int(self.vals.shape[0])

    @property
    def self_loops(self):
        return np.flatnonzero(self.rows == self.cols)

    def to_dense(self):
        out = np.zeros((self.n_nodes, self.n_nodes))
        out[self.rows, self.cols] = self.vals
        return out


def normalize_adjacency(g):
    n = g.n_nodes
    e = g.edges
    loops = np.arange(n, dtype=np.int64)
    rows = np.concatenate([e[:, 0], e[:, 1], loops])
    cols = np.concatenate([e[:, 1], e[:, 0], loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))]).astype(np.int64)
    t_perm = np.lexsort((rows, cols)).astype(np.int64)
    t_indptr = np.concatenate([[0], np.cumsum(np.bincount(cols, minlength=n))]).astype(np.int64)
    # entry (v, u) sits at position t_perm^-1 order of (u, v); both orders enumerate the same pairs
    reverse = np.empty_like(t_perm)
    reverse[t_perm] = np.arange(rows.shape[0], dtype=np.int64)
    return NormalizedAdjacency(
        n_nodes=n, indptr=_frozen(indptr, np.int64), rows=_frozen(rows, np.int64),
        cols=_frozen(cols, np.int64), vals=_frozen(vals, np.float64),
        t_indptr=_frozen(t_indptr, np.int64), t_perm=_frozen(t_perm, np.int64),
        reverse=_frozen(reverse, np.int64))


# ---------------------------------------------------------------- fixtures

def generate_sbm(n_per_block, n_blocks, p_in, p_out, feature_dim, signal, seed):
    """Stochastic block model with block-indicator features.

    Feature columns are split into ``n_blocks`` contiguous groups; a node in
    block k gets ``signal`` added to every column of group k on top of unit
    Gaussian noise. 10% of nodes form the train split, the rest the test split.
    """
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("edge probabilities must lie in [0, 1]")
    if signal < 0:
        raise ValueError("signal must be non-negative")
    rng = np.random.default_rng(seed)
    n = n_per_block * n_blocks
    labels = np.repeat(np.arange(n_blocks), n_per_block)
    starts = np.arange(n_blocks) * n_per_block
    pairs = []
    for a in range(n_blocks):
        for b in range(a, n_blocks):
            if a == b:
                iu, ju = np.triu_indices(n_per_block, k=1)
                keep = rng.random(iu.shape[0]) < p_in
                pairs.append(np.stack([iu[keep], ju[keep]], 1) + starts[a])
            else:
                keep = rng.random((n_per_block, n_per_block)) < p_out
                iu, ju = np.nonzero(keep)
                pairs.append(np.stack([iu + starts[a], ju + starts[b]], 1))
    edges = np.concatenate(pairs, axis=0) if pairs else np.zeros((0, 2), np.int64)

    features = rng.standard_normal((n, feature_dim))
    for k, cols in enumerate(np.array_split(np.arange(feature_dim), n_blocks)):
        features[np.ix_(labels == k, cols)] += signal

    perm = rng.permutation(n)
    n_train = int(round(0.1 * n))
    splits = {"train": np.sort(perm[:n_train]), "test": np.sort(perm[n_train:])}
    return Graph(n_nodes=n, edges=edges, features=features, labels=labels, splits=splits)


def choose_nodes(g, count, seed):
    """``count`` distinct node ids drawn uniformly, sorted."""
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(g.n_nodes, size=count, replace=False))


def inject_noise(g, nodes, sigma, seed):
    """Replace the feature rows of ``nodes`` with i.i.d. N(0, sigma^2) draws."""
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    if nodes.size == 0:
        raise ValueError("inject_noise needs a non-empty node set")
    if nodes.min() < 0 or nodes.max() >= g.n_nodes:
        raise ValueError("noise node index out of range")
    rng = np.random.default_rng(seed)
    feats = np.array(g.features)
    feats[nodes] = rng.normal(0.0, sigma, size=(nodes.size, g.n_features))
    return g.replace(features=feats)


def neighbor_lists(g):
    adj = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        adj[u].append(int(v))
        adj[v].append(int(u))
    return adj


def khop_rings(g, seeds, k_max):
    """Nodes at shortest-path distance exactly k from the seed set, k = 0..k_max."""
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if seeds.size == 0:
        raise ValueError("khop_rings needs at least one seed")
    adj = neighbor_lists(g)
    dist = np.full(g.n_nodes, -1, dtype=np.int64)
    dist[seeds] = 0
    queue = deque(int(s) for s in seeds)
    while queue:
        u = queue.popleft()
        if dist[u] >= k_max:
            continue
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return [np.flatnonzero(dist == k) for k in range(k_max + 1)]
