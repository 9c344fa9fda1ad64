"""Stochastic mask machinery.

Probabilities here are KEEP probabilities: a mask entry is 1 (keep the
connection) with probability ``pi``.

Per layer a mask is a ``(G, B, E)`` array: ``G`` contiguous groups of input
features, ``B`` contiguous blocks of output features and one value per entry
of the self-loop-augmented adjacency. The default sampler uses ``G = 1``.
"""
from dataclasses import dataclass

import numpy as np

from .numcore import EULER_GAMMA, Tensor
from .numcore import tensor as T

U_CLAMP = 1e-7
VIEWS = ("o", "t")


def _clamp_u(u):
    return np.clip(np.asarray(u, dtype=np.float64), U_CLAMP, 1.0 - U_CLAMP)


def _is_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def kumaraswamy_sample(a, b, u):
    """Inverse-CDF draw ``(1 - (1 - u)^(1/b))^(1/a)``; differentiable in ``a`` and ``b``."""
    u = _clamp_u(u)
    if not _is_tensor(a, b):
        return (1.0 - (1.0 - u) ** (1.0 / b)) ** (1.0 / a)
    inner = T.exp(T.div(np.log1p(-u), b))
    return T.exp(T.div(T.log(T.sub(1.0, inner)), a))


def kumaraswamy_cdf(x, a, b):
    return 1.0 - (1.0 - np.asarray(x, dtype=np.float64) ** a) ** b


def concrete_sample(pi, u, t):
    """Relaxed Bernoulli(pi) sample ``sigmoid((logit(pi) + logit(u)) / t)``."""
    if t <= 0:
        raise ValueError("temperature must be positive")
    u = _clamp_u(u)
    noise = np.log(u) - np.log1p(-u)
    if not _is_tensor(pi):
        p = _clamp_u(pi)
        z = (np.log(p) - np.log1p(-p) + noise) / t
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    p = T.clip(pi, U_CLAMP, 1.0 - U_CLAMP)
    logit = T.sub(T.log(p), T.log(T.sub(1.0, p)))
    return T.sigmoid(T.mul(T.add(logit, noise), 1.0 / t))


def bernoulli_entropy(pi):
    """Shannon entropy (nats) of Bernoulli(pi), with 0 ln 0 = 0."""
    p = np.asarray(pi, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("pi must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(p < 1, (1 - p) * np.log1p(-p), 0.0)
    return float(h) if h.ndim == 0 else h


def kl_kuma_beta(a, b, c, L, series_terms=0):
    """KL(Kumaraswamy(a, b) || Beta(c/L, c(L-1)/L)) per layer.

    With ``series_terms = 0`` this is the closed form without the infinite
    series, which is exact whenever the prior's second shape parameter is 1.
    ``series_terms > 0`` adds the Beta normalizer and a truncated series for
    other priors.
    """
    alpha = c / L
    tensor_mode = _is_tensor(a, b)
    if tensor_mode:
        a, b = T.as_tensor(a), T.as_tensor(b)
        dg = T.digamma(b)
        kl = ((a - alpha) / a) * (-EULER_GAMMA - dg - 1.0 / b) \
            + T.log(a * b / alpha) - (b - 1.0) / b
    else:
        from .numcore.special import digamma
        if a <= 0 or b <= 0:
            raise ValueError("Kumaraswamy parameters must be positive")
        kl = ((a - alpha) / a) * (-EULER_GAMMA - digamma(b) - 1.0 / b) \
            + np.log(a * b / alpha) - (b - 1.0) / b
    if series_terms:
        kl = kl + _series_correction(a, b, c, L, series_terms, tensor_mode)
    return kl


def _series_correction(a, b, c, L, terms, tensor_mode):
    alpha = c / L
    beta = c * (L - 1) / L
    if beta <= 0:
        raise ValueError("series correction needs L >= 2 (prior beta parameter > 0)")
    from .numcore.special import gammaln
    log_norm = gammaln(alpha) + gammaln(beta) - gammaln(alpha + beta) + np.log(alpha)
    if tensor_mode:
        total = 0.0
        for m in range(1, terms + 1):
            x = m / a
            log_beta = T.gammaln(x) + T.gammaln(b) - T.gammaln(x + b)
            total = total + T.exp(log_beta) / (m + a * b)
        return log_norm + (beta - 1.0) * b * total
    total = 0.0
    for m in range(1, terms + 1):
        x = m / a
        total += np.exp(gammaln(x) + gammaln(b) - gammaln(x + b)) / (m + a * b)
    return log_norm + (beta - 1.0) * b * total


# ---------------------------------------------------------------- parameters

@dataclass
class AugmentationParams:
    """Variational parameters of the keep-probability posteriors.

    ``log_a[v]`` and ``log_b[v]`` are length-L tensors for view ``v``.
    """

    log_a: dict
    log_b: dict
    c: float
    temperature: float
    n_layers: int

    @classmethod
    def init(cls, n_layers, c, temperature, log_a=0.0, log_b=0.0):
        if temperature <= 0 or c <= 0:
            raise ValueError("c and temperature must be positive")
        la = {v: Tensor(np.full(n_layers, log_a), requires_grad=True, name=f"log_a_{v}") for v in VIEWS}
        lb = {v: Tensor(np.full(n_layers, log_b), requires_grad=True, name=f"log_b_{v}") for v in VIEWS}
        return cls(la, lb, float(c), float(temperature), int(n_layers))

    def tensors(self):
        return [self.log_a[v] for v in VIEWS] + [self.log_b[v] for v in VIEWS]

    def a(self, view, layer):
        return float(np.exp(self.log_a[view].data[layer]))

    def b(self, view, layer):
        return float(np.exp(self.log_b[view].data[layer]))

    def to_json(self):
        return {
            "c": self.c, "temperature": self.temperature, "n_layers": self.n_layers,
            "log_a": {v: [float(x) for x in self.log_a[v].data] for v in VIEWS},
            "log_b": {v: [float(x) for x in self.log_b[v].data] for v in VIEWS},
        }

    @classmethod
    def from_json(cls, d):
        la = {v: Tensor(d["log_a"][v], requires_grad=True, name=f"log_a_{v}") for v in VIEWS}
        lb = {v: Tensor(d["log_b"][v], requires_grad=True, name=f"log_b_{v}") for v in VIEWS}
        return cls(la, lb, float(d["c"]), float(d["temperature"]), int(d["n_layers"]))


def sampled_pi(params, view, layer, rng, differentiable=False):
    """One reparameterized Kumaraswamy draw of the keep probability."""
    u = rng.random()
    if not differentiable:
        return float(kumaraswamy_sample(params.a(view, layer), params.b(view, layer), u))
    idx = np.zeros(params.n_layers)
    idx[layer] = 1.0
    # select one coordinate of the per-view vectors while keeping the graph
    log_a = T.tsum(T.mul(params.log_a[view], idx))
    log_b = T.tsum(T.mul(params.log_b[view], idx))
    return kumaraswamy_sample(T.exp(log_a), T.exp(log_b), u)


# ---------------------------------------------------------------- mask sets

@dataclass
class MaskSet:
    """Per-layer masks (ndarray in hard mode, Tensor or ndarray in relaxed mode)."""

    layers: list
    pis: list
    mode: str

    def __len__(self):
        return len(self.layers)

    def arrays(self):
        return [m.data if isinstance(m, Tensor) else np.asarray(m) for m in self.layers]


def _uniforms(rng, shape, adj, symmetric):
    u = rng.random(shape)
    if symmetric:
        pick = np.where(adj.rows <= adj.cols, np.arange(adj.nnz), adj.reverse)
        u = u[..., pick]
    return u


def sample_masks(adj, n_layers, n_blocks, pis, mode, rng, temperature=0.3, symmetric=False):
    """Draw one ``(1, B, E)`` mask per layer.

    ``hard`` draws Bernoulli(pi) entries; ``relaxed`` draws concrete samples
    at ``temperature`` (see :func:`sample_relaxed_masks`). Entries are
    independent per directed entry unless ``symmetric``.
    """
    if mode == "relaxed":
        return sample_relaxed_masks(adj, n_layers, n_blocks, pis, temperature, rng, symmetric)
    if mode != "hard":
        raise ValueError(f"unknown mask mode {mode!r}")
    if n_blocks < 1:
        raise ValueError("need at least one block")
    if len(pis) != n_layers:
        raise ValueError(f"expected {n_layers} keep probabilities, got {len(pis)}")
    layers = []
    for pi in pis:
        p = float(pi.data) if isinstance(pi, Tensor) else float(pi)
        if not 0.0 <= p <= 1.0:
            raise ValueError("keep probability must lie in [0, 1]")
        u = _uniforms(rng, (1, n_blocks, adj.nnz), adj, symmetric)
        layers.append((u < p).astype(np.float64))
    return MaskSet(layers, list(pis), "hard")


def sample_relaxed_masks(adj, n_layers, n_blocks, pis, temperature, rng, symmetric=False):
    """Concrete-relaxed masks; differentiable in any ``pi`` given as a Tensor.

    A float ``pi`` of exactly 1 yields exact ones (the Bernoulli(1) limit).
    """
    if n_blocks < 1:
        raise ValueError("need at least one block")
    if len(pis) != n_layers:
        raise ValueError(f"expected {n_layers} keep probabilities, got {len(pis)}")
    layers = []
    for pi in pis:
        u = _uniforms(rng, (1, n_blocks, adj.nnz), adj, symmetric)
        if not isinstance(pi, Tensor) and float(pi) >= 1.0:
            layers.append(np.ones((1, n_blocks, adj.nnz)))
        else:
            layers.append(concrete_sample(pi, u, temperature))
    return MaskSet(layers, list(pis), "relaxed")


def ones_masks(adj, n_layers, n_blocks=1):
    return MaskSet([np.ones((1, n_blocks, adj.nnz)) for _ in range(n_layers)],
                   [1.0] * n_layers, "hard")


SPECIAL_CASES = ("FeatureDrop", "EdgeDrop", "NodeDrop", "Dropout")


def special_case_masks(kind, g, adj, n_layers, pi, rng, n_blocks=1):
    """Mask patterns reproducing the classic augmentations.

    * FeatureDrop: layer 0 gets one group per input feature, all entries of
      group i equal to a Bernoulli(pi) keep flag (a single group when all
      flags agree); deeper layers all ones.
    * EdgeDrop: one keep flag per undirected edge, self-loops kept, shared
      across blocks and layers.
    * NodeDrop: entry (v, u) kept iff both v and u are kept; shared across layers.
    * Dropout: per layer, entry (v, u) of block b equals a keep flag for
      output row v and block b.
    """
    E = adj.nnz
    if kind == "FeatureDrop":
        keep = (rng.random(g.n_features) < pi).astype(np.float64)
        if np.all(keep == keep[0]):
            # nothing to tell apart: one group gives the plain computation order
            first = np.full((1, 1, E), keep[0])
        else:
            first = np.broadcast_to(keep[:, None, None], (g.n_features, 1, E)).copy()
        layers = [first] + [np.ones((1, 1, E)) for _ in range(n_layers - 1)]
    elif kind == "EdgeDrop":
        flags = (rng.random(E) < pi).astype(np.float64)
        flags = np.where(adj.rows <= adj.cols, flags, flags[adj.reverse])
        flags[adj.rows == adj.cols] = 1.0
        layers = [flags[None, None, :].copy() for _ in range(n_layers)]
    elif kind == "NodeDrop":
        keep = (rng.random(g.n_nodes) < pi).astype(np.float64)
        m = keep[adj.rows] * keep[adj.cols]
        layers = [m[None, None, :].copy() for _ in range(n_layers)]
    elif kind == "Dropout":
        layers = []
        for _ in range(n_layers):
            keep = (rng.random((g.n_nodes, n_blocks)) < pi).astype(np.float64)
            layers.append(keep[adj.rows].T[None, :, :].copy())
    else:
        raise ValueError(f"unknown augmentation type {kind!r}; expected one of {SPECIAL_CASES}")
    return MaskSet(layers, [pi] * n_layers, "hard")


def kumaraswamy_mean(a, b):
    """``b * B(1 + 1/a, b)``."""
    from .numcore.special import gammaln
    x = 1.0 + 1.0 / a
    return float(b * np.exp(gammaln(x) + gammaln(b) - gammaln(x + b)))
