"""Contrastive loss, weight decay and the KL terms."""
from dataclasses import asdict, dataclass

import numpy as np

from .augment import VIEWS, bernoulli_entropy, kl_kuma_beta
from .encoder import project
from .numcore import Tensor
from .numcore import tensor as T

COS_FLOOR = 1e-8


@dataclass
class LossBreakdown:
    l_cnt: float
    l_wd: float = 0.0
    kl_aug: float = 0.0
    kl_weights_diag: float = 0.0

    @property
    def total_phase1(self):
        return self.l_cnt + self.l_wd

    @property
    def phase2_objective(self):
        return self.l_cnt - self.kl_aug

    def to_json(self):
        d = asdict(self)
        d["total_phase1"] = self.total_phase1
        d["phase2_objective"] = self.phase2_objective
        return d


def _unit_rows(P):
    return T.div(P, T.maximum(T.l2_norm(P, axis=1, keepdims=True), COS_FLOOR))


def pairwise_similarity(P_o, P_t):
    """Cosine similarity matrix ``S[i, k] = cos(P_o[i], P_t[k])``."""
    if T.as_tensor(P_o).shape != T.as_tensor(P_t).shape:
        raise ValueError("projections must have the same shape")
    return T.matmul(_unit_rows(P_o), T.transpose(_unit_rows(P_t)))


def _one_side(s_cross, s_self, tau):
    n = s_cross.shape[0]
    eye = np.eye(n)
    e_cross = T.exp(T.mul(s_cross, 1.0 / tau))
    e_self = T.exp(T.mul(s_self, 1.0 / tau))
    pos = T.tsum(T.mul(s_cross, eye), axis=1) * (1.0 / tau)
    # mask the self term out rather than subtracting it: avoids cancellation
    denom = T.tsum(e_cross, axis=1) + T.tsum(T.mul(e_self, 1.0 - eye), axis=1)
    return pos - T.log(denom)


def contrastive_loss(P_o, P_t, tau):
    """Symmetrized NT-Xent with cross-view and intra-view negatives, on projections."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    P_o, P_t = T.as_tensor(P_o), T.as_tensor(P_t)
    n = P_o.shape[0]
    Zo, Zt = _unit_rows(P_o), _unit_rows(P_t)
    s_ot = T.matmul(Zo, T.transpose(Zt))
    s_to = T.transpose(s_ot)
    s_oo = T.matmul(Zo, T.transpose(Zo))
    s_tt = T.matmul(Zt, T.transpose(Zt))
    l_o = _one_side(s_ot, s_oo, tau)
    l_t = _one_side(s_to, s_tt, tau)
    return T.mul(T.tsum(l_o + l_t), -1.0 / (2 * n))


def grace_loss(H_o, H_t, params, tau):
    return contrastive_loss(project(H_o, params), project(H_t, params), tau)


def weight_decay(params, lam, include_head=True):
    """``lam`` times the summed squared Frobenius norms of the weight matrices."""
    if lam < 0:
        raise ValueError("weight decay must be non-negative")
    tensors = params.decay_tensors(include_head) if hasattr(params, "decay_tensors") else list(params)
    total = 0.0
    for w in tensors:
        total = T.add(total, T.tsum(T.square(w)))
    return T.mul(total, float(lam))


def weight_kl_diag(weights, keep_pis):
    """Sum over layers of ``((1 - zero_mass) / 2) * ||M||^2 - H(zero_mass)``.

    The weight posterior puts mass ``zero_mass`` on the all-zero matrix and
    the rest on ``M``. Under the keep-probability convention ``zero_mass =
    1 - keep``, so the coefficient is ``keep / 2``. ``keep_pis[l]`` is the
    keep probability of layer ``l``; pass a dict of view -> per-layer list
    to sum over views. Diagnostic only.
    """
    if isinstance(keep_pis, dict):
        return sum(weight_kl_diag(weights, keep_pis[v]) for v in sorted(keep_pis))
    total = 0.0
    for W, keep in zip(weights, keep_pis):
        w = W.data if isinstance(W, Tensor) else np.asarray(W)
        zero_mass = 1.0 - float(keep)
        total += 0.5 * (1.0 - zero_mass) * float(np.sum(w * w)) - bernoulli_entropy(zero_mass)
    return total


def augmentation_kl(aug, edge_count, n_blocks, series_terms=0, views=VIEWS):
    """Summed per-layer Kumaraswamy-Beta KL, scaled by ``edge_count * n_blocks`` per view."""
    if edge_count < 1:
        raise ValueError("edge_count must be at least 1")
    mult = float(edge_count) * float(n_blocks)
    total = 0.0
    for v in views:
        a = T.exp(aug.log_a[v])
        b = T.exp(aug.log_b[v])
        kl = kl_kuma_beta(a, b, aug.c, aug.n_layers, series_terms)
        total = T.add(total, T.tsum(kl))
    return T.mul(total, mult)
