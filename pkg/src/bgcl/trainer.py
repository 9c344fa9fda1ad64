"""Two-phase alternating training loop.

Each epoch first takes an Adam step on the encoder parameters (minimizing
the contrastive loss plus weight decay) and then an Adam ascent step on the
augmentation posteriors (maximizing the contrastive loss minus the KL).
"""
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import rng as rngmod
from .augment import (VIEWS, AugmentationParams, kumaraswamy_mean, sample_relaxed_masks,
                      sampled_pi)
from .encoder import EncoderParams, checkpoint_bytes, encode_view
from .graphdata import normalize_adjacency
from .numcore import AdamState, NonFiniteError, Tape, adam_step, backward
from .objective import (LossBreakdown, augmentation_kl, grace_loss, weight_decay,
                        weight_kl_diag)

log = logging.getLogger(__name__)

LOG_AB_MIN = float(np.log(1e-4))
LOG_AB_MAX = float(np.log(1e4))


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Hyperparameters; defaults follow the Cora recipe except where noted."""

    lr_w: float = 0.0005
    lr_a: float = 0.001
    l2: float = 5e-9
    n_blocks: int = 8
    epochs: int = 250
    hidden_dim: int = 256
    latent_dim: int = 128
    activation: str = "relu"
    tau: float = 0.4
    c: float = 2.0
    temperature: float = 0.3
    n_layers: int = 2
    seed: int = 0
    mode: str = "learned-aug"
    fixed_pi: list = field(default_factory=lambda: [[0.8, 0.8], [0.8, 0.8]])
    wd_scope: str = "all"
    kl_series_terms: int = 0
    symmetric_masks: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lr_w", "lr_a", "l2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("tau", "c", "temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n_blocks", "hidden_dim", "latent_dim", "n_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.activation.lower() not in ("relu", "prelu"):
            raise ConfigError("activation must be relu or prelu")
        if self.mode not in ("learned-aug", "fixed-aug"):
            raise ConfigError("mode must be learned-aug or fixed-aug")
        if self.wd_scope not in ("all", "encoder-only"):
            raise ConfigError("wd_scope must be all or encoder-only")
        if self.mode == "fixed-aug":
            pis = self.fixed_pi_table()
            if any(not 0.0 < p <= 1.0 for row in pis.values() for p in row):
                raise ConfigError("fixed_pi values must lie in (0, 1]")

    def fixed_pi_table(self):
        """``{"o": [...], "t": [...]}`` per-layer keep probabilities for fixed-aug mode."""
        raw = self.fixed_pi
        if isinstance(raw, (int, float)):
            raw = [[float(raw)] * self.n_layers] * 2
        if isinstance(raw, dict):
            raw = [raw["o"], raw["t"]]
        if len(raw) != 2:
            raise ConfigError("fixed_pi needs one entry per view")
        table = {}
        for v, row in zip(VIEWS, raw):
            row = [float(row)] * self.n_layers if isinstance(row, (int, float)) else [float(x) for x in row]
            if len(row) != self.n_layers:
                raise ConfigError(f"fixed_pi for view {v} needs {self.n_layers} values")
            table[v] = row
        return table

    def dims(self, n_features):
        hidden = [self.hidden_dim] * (self.n_layers - 1)
        return [n_features] + hidden + [self.latent_dim]

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: malformed JSON ({exc})") from None


@dataclass
class TrainLogRecord:
    epoch: int
    phase1: dict
    phase2: dict
    pi_draw: dict
    pi_mean: dict
    wall_ms: float = None

    def to_json(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("wall_ms")
        return d


@dataclass
class TrainResult:
    params: EncoderParams
    aug: AugmentationParams
    config: RunConfig
    records: list

    def checkpoint(self):
        return checkpoint_bytes(self.params, self.aug, self.config.n_blocks, self.config.to_json())


class TrainingAborted(RuntimeError):
    """Non-finite values during training; ``result`` holds the last good state."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@contextmanager
def frozen(tensors):
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, s in zip(tensors, saved):
            t.requires_grad = s


def _snapshot(tensors):
    return [t.data.copy() for t in tensors]


def _restore(tensors, snap):
    for t, d in zip(tensors, snap):
        t.data = d


def _clamp_aug(aug):
    for t in aug.tensors():
        clipped = np.clip(t.data, LOG_AB_MIN, LOG_AB_MAX)
        if not np.array_equal(clipped, t.data):
            log.warning("clamping %s to [1e-4, 1e4]", t.name)
            t.data = clipped


def _float_pis(pis):
    return {v: [float(p.data) if hasattr(p, "data") else float(p) for p in pis[v]] for v in VIEWS}


def _numeric_kl(aug, adj, cfg):
    with frozen(aug.tensors()):
        return float(augmentation_kl(aug, adj.nnz, cfg.n_blocks, cfg.kl_series_terms).data)


class Trainer:
    """Holds model state for one run; :meth:`run_epoch` advances one epoch."""

    def __init__(self, g, cfg):
        self.g = g
        self.cfg = cfg
        self.adj = normalize_adjacency(g)
        init = rngmod.stream(cfg.seed, rngmod.INIT)
        self.params = EncoderParams.init(cfg.dims(g.n_features), init, cfg.activation)
        self.aug = AugmentationParams.init(cfg.n_layers, cfg.c, cfg.temperature)
        self.opt_w = AdamState(self.params.tensors(), cfg.lr_w)
        self.opt_a = AdamState(self.aug.tensors(), cfg.lr_a)
        self.records = []
        self.fixed = cfg.fixed_pi_table() if cfg.mode == "fixed-aug" else None

    def _draw_pis(self, rng, differentiable):
        if self.fixed is not None:
            return {v: list(self.fixed[v]) for v in VIEWS}
        return {v: [sampled_pi(self.aug, v, l, rng, differentiable) for l in range(self.cfg.n_layers)]
                for v in VIEWS}

    def _views(self, pis, rng):
        cfg = self.cfg
        hs = []
        for v in VIEWS:
            masks = sample_relaxed_masks(self.adj, cfg.n_layers, cfg.n_blocks, pis[v],
                                         cfg.temperature, rng, cfg.symmetric_masks)
            hs.append(encode_view(self.g.features, self.adj, self.params, masks))
        return hs

    def phase1(self, epoch):
        cfg = self.cfg
        rng = rngmod.stream(cfg.seed, rngmod.EPOCH, epoch, 1)
        pis = self._draw_pis(rng, differentiable=False)
        with frozen(self.aug.tensors()), Tape():
            H_o, H_t = self._views(pis, rng)
            l_cnt = grace_loss(H_o, H_t, self.params, cfg.tau)
            l_wd = weight_decay(self.params, cfg.l2, include_head=cfg.wd_scope == "all")
            total = l_cnt + l_wd
        grads = backward(total)
        tensors = self.params.tensors()
        adam_step(tensors, [grads[t] for t in tensors], self.opt_w)
        fp = _float_pis(pis)
        return LossBreakdown(
            l_cnt=float(l_cnt.data), l_wd=float(l_wd.data),
            kl_aug=_numeric_kl(self.aug, self.adj, cfg),
            kl_weights_diag=weight_kl_diag(self.params.weights, fp)), fp

    def phase2(self, epoch):
        cfg = self.cfg
        rng = rngmod.stream(cfg.seed, rngmod.EPOCH, epoch, 2)
        if self.fixed is not None:
            # fixed drop rates: nothing to learn, report the loss only
            pis = self._draw_pis(rng, differentiable=False)
            H_o, H_t = self._views(pis, rng)
            l_cnt = float(grace_loss(H_o, H_t, self.params, cfg.tau).data)
            return LossBreakdown(l_cnt=l_cnt, kl_weights_diag=weight_kl_diag(
                self.params.weights, _float_pis(pis)))
        with frozen(self.params.tensors()), Tape():
            pis = self._draw_pis(rng, differentiable=True)
            H_o, H_t = self._views(pis, rng)
            l_cnt = grace_loss(H_o, H_t, self.params, cfg.tau)
            kl = augmentation_kl(self.aug, self.adj.nnz, cfg.n_blocks, cfg.kl_series_terms)
            objective = l_cnt - kl
        grads = backward(objective)
        tensors = self.aug.tensors()
        adam_step(tensors, [grads[t] for t in tensors], self.opt_a, maximize=True)
        _clamp_aug(self.aug)
        return LossBreakdown(l_cnt=float(l_cnt.data), kl_aug=float(kl.data),
                             kl_weights_diag=weight_kl_diag(self.params.weights, _float_pis(pis)))

    def run_epoch(self, epoch):
        start = time.perf_counter()
        all_tensors = self.params.tensors() + self.aug.tensors()
        snap = _snapshot(all_tensors)
        try:
            p1, pi_draw = self.phase1(epoch)
            p2 = self.phase2(epoch)
        except (NonFiniteError, FloatingPointError) as exc:
            _restore(all_tensors, snap)
            raise TrainingAborted(f"epoch {epoch}: {exc}", self.result()) from exc
        pi_mean = {v: [kumaraswamy_mean(self.aug.a(v, l), self.aug.b(v, l))
                       for l in range(self.cfg.n_layers)] for v in VIEWS}
        rec = TrainLogRecord(epoch=epoch, phase1=p1.to_json(), phase2=p2.to_json(),
                             pi_draw=pi_draw, pi_mean=pi_mean,
                             wall_ms=(time.perf_counter() - start) * 1000.0)
        self.records.append(rec)
        log.info("epoch %d  l_cnt %.5f  kl_aug %.4f", epoch, p1.l_cnt, p2.kl_aug)
        return rec

    def result(self):
        return TrainResult(self.params, self.aug, self.cfg, list(self.records))


def train(g, cfg, on_record=None):
    """Run ``cfg.epochs`` epochs; ``on_record`` is called with each log record."""
    trainer = Trainer(g, cfg)
    for epoch in range(1, cfg.epochs + 1):
        rec = trainer.run_epoch(epoch)
        if on_record is not None:
            on_record(rec)
    return trainer.result()
