"""GCN encoder with per-layer masked aggregation, projection head, checkpoints."""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .augment import AugmentationParams
from .numcore import Tensor, xavier_init
from .numcore import tensor as T

ACTIVATIONS = ("relu", "prelu")


def block_bounds(n_features, n_blocks):
    """Boundaries of ``n_blocks`` contiguous, near-equal feature blocks."""
    if n_blocks < 1:
        raise ValueError("need at least one block")
    sizes = [len(c) for c in np.array_split(np.arange(n_features), n_blocks)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


@dataclass
class EncoderParams:
    """Layer weights shared by both views, optional PReLU slopes, projection head."""

    weights: list
    activation: str = "relu"
    slopes: list = field(default_factory=list)
    head: dict = field(default_factory=dict)

    @classmethod
    def init(cls, dims, rng, activation="relu"):
        activation = activation.lower()
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        weights = [xavier_init(dims[i], dims[i + 1], rng, name=f"W{i}") for i in range(len(dims) - 1)]
        slopes = []
        if activation == "prelu":
            slopes = [Tensor(0.25, requires_grad=True, name=f"slope{i}") for i in range(len(weights))]
        d = dims[-1]
        head = {
            "W1": xavier_init(d, d, rng, name="head_W1"),
            "b1": Tensor(np.zeros(d), requires_grad=True, name="head_b1"),
            "W2": xavier_init(d, d, rng, name="head_W2"),
            "b2": Tensor(np.zeros(d), requires_grad=True, name="head_b2"),
        }
        return cls(weights, activation, slopes, head)

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    def tensors(self):
        return list(self.weights) + list(self.slopes) + [self.head[k] for k in ("W1", "b1", "W2", "b2")]

    def decay_tensors(self, include_head=True):
        out = list(self.weights)
        if include_head:
            out += [self.head["W1"], self.head["W2"]]
        return out


def _activate(x, activation, slope):
    if activation == "relu":
        return T.relu(x)
    if activation == "prelu":
        return T.prelu(x, slope)
    if activation == "identity":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def group_matmul(U, W, in_bounds):
    """``(G, N, F)`` stack of ``U[:, g] @ W[g, :]`` over contiguous input groups."""
    U, W = T.as_tensor(U), T.as_tensor(W)
    G = len(in_bounds) - 1
    if G == 1:
        return T.reshape(T.matmul(U, W), (1, U.shape[0], W.shape[1]))
    xw = np.stack([U.data[:, in_bounds[g]:in_bounds[g + 1]] @ W.data[in_bounds[g]:in_bounds[g + 1]]
                   for g in range(G)])

    def vjp(gxw):
        gu = np.zeros_like(U.data)
        gw = np.zeros_like(W.data)
        for g in range(G):
            lo, hi = in_bounds[g], in_bounds[g + 1]
            gu[:, lo:hi] = gxw[g] @ W.data[lo:hi].T
            gw[lo:hi] = U.data[:, lo:hi].T @ gxw[g]
        return gu, gw

    return T.custom(xw, (U, W), vjp, "group_matmul")


def masked_aggregate(adj, xw, masks, out_bounds):
    """Differentiable wrapper over :func:`bgcl.kernels.masked_aggregate`."""
    xw, masks = T.as_tensor(xw), T.as_tensor(masks)
    out = kernels.masked_aggregate(adj.indptr, adj.cols, adj.vals, xw.data, out_bounds, masks.data)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxw = None
        gm = None
        if xw.requires_grad:
            gxw = kernels.masked_aggregate_grad_xw(adj.t_indptr, adj.t_perm, adj.rows, adj.vals,
                                                   g, out_bounds, masks.data)
        if masks.requires_grad:
            gm = kernels.masked_aggregate_grad_masks(adj.rows, adj.cols, adj.vals, xw.data, g,
                                                     out_bounds)
        return gxw, gm

    return T.custom(out, (xw, masks), vjp, "masked_aggregate")


def _mask_shape(mask):
    return mask.shape if isinstance(mask, Tensor) else np.shape(mask)


def gcn_aug_layer(U, adj, mask, W, activation="relu", slope=None):
    """One layer with generalized augmentation.

    For output block b and input group g the layer aggregates with
    ``Anorm * mask[g, b]`` (entrywise on the stored entries), i.e. masks
    multiply the fixed normalized adjacency.
    """
    U, W = T.as_tensor(U), T.as_tensor(W)
    if U.shape[1] != W.shape[0]:
        raise ValueError(f"feature dimension mismatch: U has {U.shape[1]}, W expects {W.shape[0]}")
    if U.shape[0] != adj.n_nodes:
        raise ValueError("row count of U does not match the adjacency")
    if mask is None:
        mask = np.ones((1, 1, adj.nnz))
    G, B, E = _mask_shape(mask)
    if E != adj.nnz:
        raise ValueError(f"mask covers {E} entries, adjacency has {adj.nnz}")
    in_bounds = block_bounds(W.shape[0], G)
    out_bounds = block_bounds(W.shape[1], B)
    xw = group_matmul(U, W, in_bounds)
    pre = masked_aggregate(adj, xw, mask, out_bounds)
    return _activate(pre, activation, slope)


def connection_weight_view(W, mask, adj, U, activation="relu", slope=None):
    """Per-edge formulation: each stored entry (v, u) carries its own weight
    matrix ``W_e[i, j] = mask[group(i), block(j), e] * W[i, j]`` and
    ``out[v] = act(sum_e c_e * U[u] @ W_e)``. Plain numpy, no tape.
    """
    W = np.asarray(W.data if isinstance(W, Tensor) else W)
    U = np.asarray(U.data if isinstance(U, Tensor) else U)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    G, B, E = mask.shape
    gi = np.repeat(np.arange(G), np.diff(block_bounds(W.shape[0], G)))
    bj = np.repeat(np.arange(B), np.diff(block_bounds(W.shape[1], B)))
    out = np.zeros((U.shape[0], W.shape[1]))
    for e in range(E):
        v, u, c = adj.rows[e], adj.cols[e], adj.vals[e]
        w_e = mask[gi[:, None], bj[None, :], e] * W
        out[v] += c * (U[u] @ w_e)
    s = None if slope is None else float(slope.data if isinstance(slope, Tensor) else slope)
    if activation == "relu":
        return np.maximum(out, 0.0)
    if activation == "prelu":
        return np.where(out > 0, out, s * out)
    return out


def encode_view(features, adj, params, masks=None):
    """L-layer encoder; ``masks=None`` is the unaugmented (deterministic) pass."""
    if masks is not None and len(masks) != params.n_layers:
        raise ValueError(f"mask set has {len(masks)} layers, encoder has {params.n_layers}")
    h = T.as_tensor(features)
    for l, W in enumerate(params.weights):
        mask = None if masks is None else masks.layers[l]
        slope = params.slopes[l] if params.slopes else None
        h = gcn_aug_layer(h, adj, mask, W, params.activation, slope)
    return h


def project(H, params):
    """Two dense layers with ELU between them; rows are not normalized."""
    hd = params.head
    z = T.elu(T.add(T.matmul(H, hd["W1"]), hd["b1"]))
    return T.add(T.matmul(z, hd["W2"]), hd["b2"])


# ---------------------------------------------------------------- checkpoint

MAGIC = b"BGCL"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _blob_list(params):
    blobs = [(f"W{i}", w) for i, w in enumerate(params.weights)]
    blobs += [(f"slope{i}", s) for i, s in enumerate(params.slopes)]
    blobs += [(f"head_{k}", params.head[k]) for k in ("W1", "b1", "W2", "b2")]
    return blobs


def checkpoint_bytes(params, aug, n_blocks, config=None):
    blobs = _blob_list(params)
    header = {
        "dims": params.dims,
        "n_layers": params.n_layers,
        "n_blocks": int(n_blocks),
        "activation": params.activation,
        "theta_a": aug.to_json(),
        "config": config or {},
        "blobs": [{"name": n, "shape": list(t.shape)} for n, t in blobs],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(head)), head]
    for _, t in blobs:
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params, aug, n_blocks, config=None):
    data = checkpoint_bytes(params, aug, n_blocks, config)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


@dataclass
class Checkpoint:
    params: EncoderParams
    aug: AugmentationParams
    n_blocks: int
    config: dict


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def parse_checkpoint(data):
    if data[:4] != MAGIC:
        raise CheckpointError("not a BGCL checkpoint (bad magic bytes)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    tensors = {}
    for spec in header["blobs"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        tensors[spec["name"]] = Tensor(arr, requires_grad=True, name=spec["name"])
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint blobs")
    n_layers = header["n_layers"]
    weights = [tensors[f"W{i}"] for i in range(n_layers)]
    slopes = [tensors[f"slope{i}"] for i in range(n_layers) if f"slope{i}" in tensors]
    head = {k: tensors[f"head_{k}"] for k in ("W1", "b1", "W2", "b2")}
    params = EncoderParams(weights, header["activation"], slopes, head)
    if params.dims != header["dims"]:
        raise CheckpointError("declared dims disagree with weight shapes")
    aug = AugmentationParams.from_json(header["theta_a"])
    return Checkpoint(params, aug, int(header["n_blocks"]), header.get("config", {}))
