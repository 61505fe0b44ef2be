"""Training and evaluation driver: single-pathway baseline and dual-pathway
modes with every ablation switch, SGD with momentum and cosine decay,
curriculum-weighted batch sampling, mixed-view construction, per-domain
accuracy reports, and the measured-bound assembly."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import bounds as bd
from . import clustering as cl
from . import curriculum as cur
from . import encoder as enc
from . import losses as ls
from . import patchmix as pm
from .synthdata import Dataset

__all__ = [
    "AblationFlags", "Recipe", "TrainConfig", "OptimizerState", "EpochStats",
    "EvalReport", "resolve_recipe", "cosine_lr", "make_views", "train_epoch",
    "predict_semantic", "evaluate", "run_experiment", "RunResult",
]

MODES = ("simgcd", "hilo")
ONLY_FLAGS = ("patchmix_only", "mi_only", "curriculum_only")


@dataclass
class AblationFlags:
    no_mi: bool = False
    no_curriculum: bool = False
    no_patchmix: bool = False
    deep_only: bool = False
    shallow_only: bool = False
    patchmix_only: bool = False
    mi_only: bool = False
    curriculum_only: bool = False

    def active(self) -> list:
        return [f.name for f in dataclasses.fields(self) if getattr(self, f.name)]

    def validate(self) -> None:
        act = self.active()
        only = [f for f in act if f in ONLY_FLAGS]
        if only and len(act) > 1:
            raise ValueError(f"{only[0]} is a standalone recipe; got extra flags {sorted(set(act) - {only[0]})}")
        if self.deep_only and self.shallow_only:
            raise ValueError("deep_only and shallow_only are mutually exclusive")


@dataclass
class Recipe:
    """Resolved component switches for one training run."""
    use_mi: bool
    use_curriculum: bool
    use_patchmix: bool
    use_domain_head: bool
    domain_tap: int
    semantic_tap: int


def resolve_recipe(mode: str, flags: AblationFlags, num_layers: int) -> Recipe:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    flags.validate()
    if mode == "simgcd":
        if flags.active():
            raise ValueError(f"simgcd mode takes no ablation flags, got {flags.active()}")
        return Recipe(False, False, False, False, 1, num_layers)
    if flags.patchmix_only:
        return Recipe(False, False, True, False, 1, num_layers)
    if flags.mi_only:
        return Recipe(True, False, False, True, 1, num_layers)
    if flags.curriculum_only:
        return Recipe(False, True, False, False, 1, num_layers)
    r = Recipe(not flags.no_mi, not flags.no_curriculum, not flags.no_patchmix,
               True, 1, num_layers)
    if flags.deep_only:
        r.domain_tap = num_layers
    if flags.shallow_only:
        r.semantic_tap = 1
    return r


@dataclass
class TrainConfig:
    mode: str = "hilo"
    epochs: int = 60
    batch_size: int = 64
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    eval_every: int = 10
    jitter_scale: float = 0.05      # noise sigma as a fraction of the data scale
    mask_prob: float = 0.1          # chance of zeroing each patch in a view
    patchmix_fraction: float = 0.25  # chance a row is mixed at all; 1 mixes every row
    mi_eval_samples: int = 256      # subsample size for the evaluation-time estimate
    mi_train_rows: int | None = 64  # row cap for the quadratic training-time grid
    ablations: AblationFlags = field(default_factory=AblationFlags)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr0 < 0 or not (0.0 <= self.momentum < 1.0) or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if not (0.0 <= self.mask_prob < 1.0) or self.jitter_scale < 0:
            raise ValueError("bad augmentation settings")
        if not (0.0 <= self.patchmix_fraction <= 1.0):
            raise ValueError(f"patchmix_fraction must lie in [0, 1], got {self.patchmix_fraction}")
        if self.mi_eval_samples < 2:
            raise ValueError("mi_eval_samples must be >= 2")
        if self.mi_train_rows is not None and self.mi_train_rows < 2:
            raise ValueError("mi_train_rows must be None or >= 2")
        # taps are filled in per-encoder later; a placeholder layer count is
        # enough to reject bad mode/flag combinations up front
        resolve_recipe(self.mode, self.ablations, num_layers=1)


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """Half-cosine decay from lr0 at epoch 0 toward 0 at epoch `total`."""
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


class OptimizerState:
    """SGD with momentum and decoupled-from-nothing weight decay (the decay
    joins the gradient, the classic formulation)."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {}
        self.lr = 0.0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.lr = lr
        for name, g in grads.items():
            p = params[name]
            g = g + self.weight_decay * p
            buf = self.buffers.get(name)
            buf = g if buf is None else self.momentum * buf + g
            self.buffers[name] = buf
            p -= lr * buf


def make_views(patches: np.ndarray, rng: np.random.Generator, scale: float,
               jitter_scale: float, mask_prob: float):
    """Two stochastic views: additive noise plus whole-patch zero masking."""
    views = []
    for _ in range(2):
        v = patches + rng.normal(scale=jitter_scale * scale, size=patches.shape)
        keep = rng.random(patches.shape[:2]) >= mask_prob
        views.append(v * keep[:, :, None])
    return views[0], views[1]


@dataclass
class EpochStats:
    total: float = 0.0
    rep: float = 0.0
    cls: float = 0.0
    sem: float = 0.0
    dom: float = 0.0
    mi: float = 0.0
    batches: int = 0

    def add(self, b: ls.LossBundle) -> None:
        self.total += b.total
        self.rep += b.rep
        self.cls += b.cls
        self.sem += b.sem
        self.dom += b.dom
        self.mi += b.mi
        self.batches += 1

    def mean(self) -> dict:
        d = max(1, self.batches)
        return {"total": self.total / d, "rep": self.rep / d, "cls": self.cls / d,
                "sem": self.sem / d, "dom": self.dom / d, "mi": self.mi / d}


def _renormalize_prototypes(state: enc.EncoderState) -> None:
    for name in ("proto_sem", "proto_dom"):
        p = state.params[name]
        p /= np.linalg.norm(p, axis=1, keepdims=True) + ad.EPS_NORM


def _forward_cfg(state: enc.EncoderState, recipe: Recipe) -> enc.EncoderConfig:
    return dataclasses.replace(state.cfg, domain_tap_layer=recipe.domain_tap,
                               semantic_tap_layer=recipe.semantic_tap)


def _domain_pseudo(z_d: np.ndarray, labelled: np.ndarray, k_d: int, seed: int) -> np.ndarray:
    """Mini-batch domain pseudo-labels: constrained k-means over the batch's
    domain features with labelled members pinned to cluster 0."""
    forced = {int(i): 0 for i in np.where(labelled)[0]}
    k = min(k_d, z_d.shape[0])
    if k < 2:
        return np.zeros(z_d.shape[0], dtype=np.int64)
    return cl.ss_kmeans(z_d, k, forced, seed=seed).assignments


def train_epoch(state: enc.EncoderState, optimizer: OptimizerState, dataset: Dataset,
                epoch: int, train_cfg: TrainConfig, loss_cfg: ls.LossConfig,
                cur_cfg: cur.CurriculumConfig, rng: np.random.Generator) -> EpochStats:
    """One pass of ceil(N / batch) weighted batches with both views, the
    mode's loss, an SGD step, and prototype renormalization."""
    train_cfg.validate()
    recipe = resolve_recipe(train_cfg.mode, train_cfg.ablations, state.cfg.num_layers)
    fcfg = _forward_cfg(state, recipe)
    n_total = dataset.patches.shape[0]
    labelled_all = dataset.labelled
    scale = float(dataset.patches.std())

    if recipe.use_curriculum:
        z_d_all = enc.forward_numpy(state, dataset.patches, cfg=fcfg).z_d.data
        part = cur.partition_domains(z_d_all, np.where(labelled_all)[0],
                                     k=cur_cfg.partition_k, seed=epoch)
        weights = cur.dataset_weights(n_total, epoch, labelled_all, part, cur_cfg)
    else:
        weights = np.ones(n_total)

    eff_loss_cfg = loss_cfg
    if not recipe.use_domain_head:
        eff_loss_cfg = dataclasses.replace(loss_cfg, domain_head_weight=0.0)

    lr = cosine_lr(train_cfg.lr0, epoch, train_cfg.epochs)
    stats = EpochStats()
    steps = math.ceil(n_total / train_cfg.batch_size)
    for b in range(steps):
        idx = cur.draw_batch(weights, train_cfg.batch_size, rng)
        raw = dataset.patches[idx]
        labels = dataset.class_ids[idx]
        labelled = labelled_all[idx]
        v1, v2 = make_views(raw, rng, scale, train_cfg.jitter_scale, train_cfg.mask_prob)

        tape = ad.Tape()
        params = state.tracked(tape)
        if train_cfg.mode == "simgcd":
            out = enc.forward(params, fcfg, np.concatenate([v1, v2], axis=0))
            bundle = ls.simgcd_loss(out.z_s, out.z_hat, params["proto_sem"],
                                    labels, labelled, loss_cfg)
        else:
            m = idx.size
            if recipe.use_patchmix:
                # one gradient-free pass serves the pseudo-labels (raw rows)
                # and both views' attention scores
                probe = enc.forward_numpy(state, np.concatenate([raw, v1, v2]), cfg=fcfg)
                z_d_raw = probe.z_d.data[:m]
                scores = (probe.attn_cls.data[m:2 * m], probe.attn_cls.data[2 * m:])
            else:
                z_d_raw = enc.forward_numpy(state, raw, cfg=fcfg).z_d.data
            pseudo = _domain_pseudo(z_d_raw, labelled, fcfg.k_d, seed=epoch * steps + b)
            if recipe.use_patchmix:
                mixed = pm.make_mixed_views(params, fcfg, state, v1, v2, ~labelled, rng,
                                            attn_scores=scores,
                                            mix_fraction=train_cfg.patchmix_fraction)
                out, alphas = mixed.outputs, mixed.alphas
            else:
                out = enc.forward(params, fcfg, np.concatenate([v1, v2], axis=0))
                alphas = np.ones(2 * m)
            critic = lambda pairs: enc.critic_apply(params, pairs)
            bundle = ls.hilo_total(out.z_s, out.z_hat, out.z_d,
                                   params["proto_sem"], params["proto_dom"], critic,
                                   labels, labelled, pseudo, alphas, eff_loss_cfg,
                                   use_mi=recipe.use_mi, adversarial=True,
                                   mi_max_rows=train_cfg.mi_train_rows)
        if not np.isfinite(bundle.total):
            raise FloatingPointError(
                f"non-finite loss {bundle.total!r} at epoch {epoch} batch {b} "
                f"(mode {train_cfg.mode}, batch indices {idx[:8].tolist()}...)")
        tape.backward(bundle.objective_t)
        grads = {name: t.grad for name, t in params.items() if t.grad is not None}
        optimizer.step(state.params, grads, lr)
        if lr != 0.0:
            # rows stayed put at zero lr; renormalizing would still divide by
            # a norm one ulp off 1 and perturb them
            _renormalize_prototypes(state)
        stats.add(bundle)
    return stats


# -- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    overall: cl.AccReport          # whole unlabelled pool; defines the matching
    seen: cl.AccReport
    unseen: cl.AccReport
    bounds: bd.BoundReport
    mi_estimate: float
    e_l: float


def predict_semantic(state: enc.EncoderState, patches: np.ndarray,
                     cfg: enc.EncoderConfig | None = None):
    """Argmax class over the semantic prototypes, plus the raw features."""
    out = enc.forward_numpy(state, patches, cfg=cfg)
    logits = enc.cosine_logits(out.z_hat, ad.constant(state.params["proto_sem"]))
    return np.argmax(logits.data, axis=1), out


def _subset_report(y_true, y_pred, mapping: dict, old_classes) -> cl.AccReport:
    mapped = np.array([mapping.get(int(c), -1) for c in y_pred])
    hits = mapped == y_true
    old = np.isin(y_true, list(old_classes))

    def rate(mask):
        return float(hits[mask].mean()) if mask.any() else 0.0

    return cl.AccReport(acc_all=float(hits.mean()) if hits.size else 0.0,
                        acc_old=rate(old), acc_new=rate(~old), permutation=mapping)


def evaluate(state: enc.EncoderState, dataset: Dataset, bounds_cfg: bd.BoundsConfig,
             train_cfg: TrainConfig | None = None) -> EvalReport:
    """Deterministic report: per-domain clustering accuracy of the unlabelled
    pool under one shared cluster-to-class matching, plus measured bounds.

    The matching is computed once over all unlabelled samples and then
    restricted to each domain, so the two domains are scored against the same
    head permutation.
    """
    train_cfg = train_cfg or TrainConfig()
    recipe = resolve_recipe(train_cfg.mode, train_cfg.ablations, state.cfg.num_layers)
    fcfg = _forward_cfg(state, recipe)
    pred, out = predict_semantic(state, dataset.patches, cfg=fcfg)
    labelled = dataset.labelled
    unlab = ~labelled
    seen_mask = unlab & (dataset.domain_ids == 0)
    unseen_mask = unlab & (dataset.domain_ids > 0)

    overall = cl.cluster_acc(dataset.class_ids[unlab], pred[unlab],
                             old_classes=range(dataset.num_old))
    mapping = overall.permutation
    seen = _subset_report(dataset.class_ids[seen_mask], pred[seen_mask], mapping,
                          range(dataset.num_old))
    unseen = _subset_report(dataset.class_ids[unseen_mask], pred[unseen_mask], mapping,
                            range(dataset.num_old))

    e_l = float((pred[labelled] != dataset.class_ids[labelled]).mean()) if labelled.any() else 0.0

    # binary seen/unseen domain classifier from the domain head
    dom_logits = enc.cosine_logits(out.z_d, ad.constant(state.params["proto_dom"])).data
    dom_pred = np.argmax(dom_logits, axis=1)
    a_mask = dataset.domain_ids == 0
    err_a = float((dom_pred[a_mask] != 0).mean()) if a_mask.any() else 0.0
    err_b = float((dom_pred[~a_mask] == 0).mean()) if (~a_mask).any() else 0.0
    d_hat = bd.proxy_a_distance(err_a, err_b)

    d_proxy = bounds_cfg.complexity or enc.domain_head_param_count(state.cfg)
    conf = bd.confidence_term(d_proxy, int(a_mask.sum()), int((~a_mask).sum()),
                              bounds_cfg.delta)

    rng = np.random.default_rng(0)
    m = min(train_cfg.mi_eval_samples, dataset.patches.shape[0])
    sub = rng.choice(dataset.patches.shape[0], size=m, replace=False)
    critic = lambda pairs: enc.critic_apply(state.constants(), pairs)
    mi_est = float(ls.mi_js(ad.constant(out.z_d.data[sub]),
                            ad.constant(out.z_s.data[sub]), critic).data)

    e_u = 1.0 - unseen.acc_all if unseen_mask.any() else 0.0
    report = bd.thm_bounds(e_l=e_l, d_hat=d_hat, confidence=conf,
                           mi_estimate=mi_est, e_u=e_u, cfg=bounds_cfg)
    return EvalReport(overall=overall, seen=seen, unseen=unseen, bounds=report,
                      mi_estimate=mi_est, e_l=e_l)


# -- full run ---------------------------------------------------------------

@dataclass
class RunResult:
    rows: list                      # dict per eval point
    final: EvalReport
    state: enc.EncoderState


def run_experiment(dataset: Dataset, enc_cfg: enc.EncoderConfig,
                   train_cfg: TrainConfig, loss_cfg: ls.LossConfig,
                   cur_cfg: cur.CurriculumConfig, bounds_cfg: bd.BoundsConfig,
                   seed: int = 0, checkpoint_dir: str | None = None) -> RunResult:
    """Train for the configured epochs, evaluating every eval_every epochs and
    once more at the end; ``checkpoint_dir`` saves the state at each eval point."""
    train_cfg.validate()
    loss_cfg.validate()
    cur_cfg.validate()
    state = enc.init_state(enc_cfg, seed=seed)
    optimizer = OptimizerState(train_cfg.momentum, train_cfg.weight_decay)
    rng = np.random.default_rng(seed)
    rows = []
    final = None
    for t in range(train_cfg.epochs):
        stats = train_epoch(state, optimizer, dataset, t, train_cfg, loss_cfg,
                            cur_cfg, rng)
        last = t == train_cfg.epochs - 1
        if last or (t + 1) % train_cfg.eval_every == 0:
            rep = evaluate(state, dataset, bounds_cfg, train_cfg)
            if checkpoint_dir is not None:
                enc.save_state(state, os.path.join(checkpoint_dir, f"state_epoch{t:03d}.txt"))
            if last:
                final = rep
            m = stats.mean()
            rows.append({
                "epoch": t, "lr": optimizer.lr,
                "loss_total": m["total"], "loss_rep": m["rep"], "loss_cls": m["cls"],
                "loss_sem": m["sem"], "loss_dom": m["dom"], "loss_mi": m["mi"],
                "seen_all": rep.seen.acc_all, "seen_old": rep.seen.acc_old,
                "seen_new": rep.seen.acc_new, "unseen_all": rep.unseen.acc_all,
                "unseen_old": rep.unseen.acc_old, "unseen_new": rep.unseen.acc_new,
                "d_hat": rep.bounds.d_hat, "mi_estimate": rep.mi_estimate,
                "e_l": rep.e_l, "e_u": rep.bounds.e_u,
                "thm1_rhs": rep.bounds.thm1_rhs, "thm2_rhs": rep.bounds.thm2_rhs,
                "thm1_slack": rep.bounds.thm1_slack, "thm2_slack": rep.bounds.thm2_slack,
            })
    return RunResult(rows=rows, final=final, state=state)
