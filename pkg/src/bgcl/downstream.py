"""Monte-Carlo embeddings and the mixture-likelihood linear classifier."""
import struct
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .augment import sample_masks, sampled_pi
from .encoder import encode_view
from .graphdata import normalize_adjacency
from .numcore import AdamState, Tape, Tensor, adam_step, backward, xavier_init
from .numcore import tensor as T

EMB_MAGIC = b"BGCE"
EMB_VERSION = 1
INFERENCE_VIEW = "o"


@dataclass
class EmbeddingSamples:
    data: np.ndarray  # (S, N, D)
    seed: int = 0

    @property
    def n_samples(self):
        return self.data.shape[0]

    def rows(self, nodes):
        return EmbeddingSamples(self.data[:, nodes, :], self.seed)

    def slice(self, start, stop):
        return EmbeddingSamples(self.data[start:stop], self.seed)


def _as_array(samples):
    return samples.data if isinstance(samples, EmbeddingSamples) else np.asarray(samples)


def _check_dims(ckpt, g):
    if ckpt.params.dims[0] != g.n_features:
        raise ValueError(f"checkpoint expects {ckpt.params.dims[0]} input features, "
                         f"graph has {g.n_features}")


def embedding_sample(ckpt, g, adj, index, seed):
    """The ``index``-th Monte-Carlo embedding; independent of how samples are batched."""
    rng = rngmod.stream(seed, rngmod.SAMPLE, index)
    L = ckpt.params.n_layers
    pis = [sampled_pi(ckpt.aug, INFERENCE_VIEW, l, rng) for l in range(L)]
    masks = sample_masks(adj, L, ckpt.n_blocks, pis, "hard", rng)
    return encode_view(g.features, adj, ckpt.params, masks).data


def sample_embeddings(ckpt, g, S, seed, start=0, adj=None):
    """``S`` forward passes with hard Bernoulli masks, keep rates drawn from the
    learned posterior of the inference view. Samples ``start .. start+S-1``."""
    if S < 1:
        raise ValueError("need at least one sample")
    _check_dims(ckpt, g)
    adj = adj or normalize_adjacency(g)
    data = np.stack([embedding_sample(ckpt, g, adj, start + i, seed) for i in range(S)])
    return EmbeddingSamples(data, seed)


def deterministic_embed(ckpt, g):
    """Mask-free forward pass (non-Bayesian inference)."""
    _check_dims(ckpt, g)
    return encode_view(g.features, normalize_adjacency(g), ckpt.params, None).data


def save_embeddings(path, samples):
    arr = _as_array(samples)
    S, N, D = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC + struct.pack("<IIII", EMB_VERSION, S, N, D))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_embeddings(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != EMB_MAGIC:
        raise ValueError("not an embedding samples file (bad magic bytes)")
    version, S, N, D = struct.unpack_from("<IIII", raw, 4)
    if version != EMB_VERSION:
        raise ValueError(f"unsupported embedding file version {version}")
    body = raw[20:]
    if len(body) != 8 * S * N * D:
        raise ValueError("embedding file size does not match its header")
    return EmbeddingSamples(np.frombuffer(body, dtype="<f8").reshape(S, N, D).copy())


# ---------------------------------------------------------------- classifier

def _with_bias(H):
    return np.concatenate([H, np.ones(H.shape[:-1] + (1,))], axis=-1)


def mixture_log_likelihood(W, H, labels, n_classes, mixture="node"):
    """Mean over nodes of the log Monte-Carlo likelihood.

    ``node``: sum_v log (1/K) sum_i p(y_v | H_i[v]).
    ``dataset``: log (1/K) sum_i prod_v p(y_v | H_i[v]), computed in log space.
    """
    K, n, D = H.shape
    onehot = np.zeros((K * n, n_classes))
    onehot[np.arange(K * n), np.tile(labels, K)] = 1.0
    logits = T.matmul(_with_bias(H).reshape(K * n, D + 1), W)
    picked = T.tsum(T.mul(T.log_softmax(logits, axis=1), onehot), axis=1)
    per_sample = T.reshape(picked, (K, n))
    if mixture == "node":
        ll = T.tsum(T.logsumexp(per_sample, axis=0)) - n * np.log(K)
    elif mixture == "dataset":
        ll = T.logsumexp(T.tsum(per_sample, axis=1), axis=0) - np.log(K)
    else:
        raise ValueError("mixture must be 'node' or 'dataset'")
    return T.mul(ll, 1.0 / n)


def mc_logreg_train(samples, labels, K, epochs=150, lr=0.1, seed=0, n_classes=None,
                    mixture="node", history=None):
    """Fit ``W_c`` (with bias row) by maximizing the MC mixture likelihood with Adam.

    ``samples`` holds the train-node embeddings, shape ``(S, n, D)``; the
    first ``K`` samples are used.
    """
    H = _as_array(samples)
    labels = np.asarray(labels, dtype=np.int64)
    if H.shape[1] == 0 or labels.size == 0:
        raise ValueError("empty train split")
    if K > H.shape[0]:
        raise ValueError(f"K={K} exceeds the {H.shape[0]} available samples")
    if np.any(labels < 0):
        raise ValueError("train labels must be non-negative class ids")
    H = H[:K]
    C = int(n_classes or labels.max() + 1)
    rng = rngmod.stream(seed, rngmod.CLASSIFIER)
    W = xavier_init(H.shape[2] + 1, C, rng, name="W_c")
    state = AdamState([W], lr)
    for _ in range(epochs):
        with Tape():
            obj = mixture_log_likelihood(W, H, labels, C, mixture)
        g = backward(obj)
        adam_step([W], [g[W]], state, maximize=True)
        if history is not None:
            history.append(float(obj.data))
    return W.data.copy()


def mc_predict(samples, W):
    """Average of ``softmax([H_i, 1] @ W)`` over samples; shape ``(N, C)``."""
    H = _as_array(samples)
    if H.ndim == 2:
        H = H[None]
    W = np.asarray(W.data if isinstance(W, Tensor) else W)
    if H.shape[2] + 1 != W.shape[0]:
        raise ValueError(f"embedding dim {H.shape[2]} does not match classifier rows {W.shape[0]}")
    logits = _with_bias(H) @ W
    logits -= logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return p.mean(axis=0)
