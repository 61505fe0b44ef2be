"""Training objectives: contrastive representation terms, prototype
classification with teacher sharpening, mean-entropy regularization, the
pairwise dependence estimator, and the assembled single-head / dual-head
batch losses.

Batch layout convention: a mini-batch of n samples contributes two views,
stacked view-major into 2n rows (row i and row i+n are the two views of
sample i).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import cosine_logits

__all__ = [
    "LossConfig", "LossBundle",
    "rep_loss", "patchmix_rep_loss", "cls_loss", "sharpen_teacher", "entropy_reg",
    "masked_info_nce", "soft_cross_entropy", "mi_js", "mi_js_training",
    "simgcd_loss", "hilo_total", "two_view_masks", "smooth_rows",
]


@dataclass
class LossConfig:
    tau_unsup: float = 0.07        # self-supervised contrastive temperature
    tau_sup: float = 1.0           # supervised contrastive temperature
    tau_student: float = 0.1       # classification softmax temperature
    tau_teacher: float = 0.07      # sharpening temperature for pseudo-labels
    balance: float = 0.35          # weight on the all-samples term; 1-balance on the labelled term
    entropy_weight: float = 0.1            # single-head objective
    entropy_weight_joint: float = 0.1      # dual-head objective
    domain_head_weight: float = 1.0        # scales the domain-head loss and its entropy term

    def validate(self) -> None:
        for name in ("tau_unsup", "tau_sup", "tau_student", "tau_teacher"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 <= self.balance <= 1.0):
            raise ValueError(f"balance must lie in [0, 1], got {self.balance}")
        if self.entropy_weight < 0 or self.entropy_weight_joint < 0:
            raise ValueError("entropy weights must be non-negative")
        if self.domain_head_weight < 0:
            raise ValueError(f"domain_head_weight must be non-negative, got {self.domain_head_weight}")


@dataclass
class LossBundle:
    """Scalar per-batch values plus the differentiable totals.

    ``total_t`` is the reported objective; ``objective_t`` is what the trainer
    backpropagates (identical unless the dependence term runs adversarially).
    """
    rep: float = 0.0
    cls: float = 0.0
    sem: float = 0.0
    dom: float = 0.0
    mi: float = 0.0
    ent_sem: float = 0.0
    ent_dom: float = 0.0
    total: float = 0.0
    total_t: Tensor | None = None
    objective_t: Tensor | None = None


# -- reference single-anchor ops (oracle-friendly surfaces) -----------------

def rep_loss(anchor, positives, negatives, tau: float) -> Tensor:
    """-(1/|P|) sum over positives of log softmax(anchor . p / tau) where the
    softmax denominator runs over the union of positives and negatives.

    The candidate set is a set: a feature vector listed twice contributes one
    denominator term, so duplicated positives change only the (trivial) mean.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    anchor = ad.constant(anchor) if not isinstance(anchor, Tensor) else anchor
    positives = ad.constant(positives) if not isinstance(positives, Tensor) else positives
    if positives.ndim != 2 or positives.shape[0] == 0:
        raise ValueError("positives must be a non-empty (p, d) matrix")
    pool = [positives]
    if negatives is not None:
        negatives = ad.constant(negatives) if not isinstance(negatives, Tensor) else negatives
        if negatives.size:
            pool.append(negatives)
    stacked = ad.concat(pool, axis=0) if len(pool) > 1 else positives
    _, keep = np.unique(stacked.data, axis=0, return_index=True)
    cand = ad.index_rows(stacked, np.sort(keep))
    a = ad.reshape_(anchor, (1, anchor.shape[-1]))
    lse = ad.logsumexp_last(ad.mul(ad.matmul(a, ad.transpose_(cand)), 1.0 / tau), keepdims=True)
    p = positives.shape[0]
    pos_logits = ad.mul(ad.matmul(a, ad.transpose_(positives)), 1.0 / tau)
    return ad.mul(ad.sum_(ad.sub(lse, pos_logits)), 1.0 / p)


def patchmix_rep_loss(anchor, positives, negatives, alpha: float, tau: float) -> Tensor:
    """Mixing-proportion-scaled contrastive loss."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return ad.mul(rep_loss(anchor, positives, negatives, tau), alpha)


def cls_loss(pred_probs, target) -> Tensor:
    """Cross-entropy -sum(q log p) for one probability vector."""
    pred_probs = ad.constant(pred_probs) if not isinstance(pred_probs, Tensor) else pred_probs
    q = np.asarray(target, dtype=np.float64)
    if q.shape != pred_probs.shape:
        raise ValueError(f"target shape {q.shape} does not match prediction shape {pred_probs.shape}")
    if abs(q.sum() - 1.0) > 1e-6 or (q < 0).any():
        raise ValueError("target must be a probability vector (sum 1 within 1e-6, entries >= 0)")
    return ad.neg(ad.sum_(ad.mul(ad.log(pred_probs), q)))


def sharpen_teacher(logits, tau: float) -> Tensor:
    """Low-temperature softmax of detached logits; the result is a constant."""
    logits = ad.constant(logits) if not isinstance(logits, Tensor) else logits
    return ad.softmax_last(ad.stop_grad(logits), tau)


def entropy_reg(pred_probs) -> Tensor:
    """Negative entropy of the mean prediction (natural log); adding this to a
    minimized objective pushes the mean prediction toward uniform."""
    pred_probs = ad.constant(pred_probs) if not isinstance(pred_probs, Tensor) else pred_probs
    mean = ad.mean_(pred_probs, axis=0)
    return ad.sum_(ad.xlogx(mean))


# -- batched internals ------------------------------------------------------

def two_view_masks(n: int, labels: np.ndarray, labelled: np.ndarray):
    """Positive / candidate masks over the 2n two-view rows.

    Returns (other_row, unsup_pos, unsup_cand, sup_pos, sup_cand, lab_rows).
    Supervised masks cover labelled rows only: positives are same-class rows
    (the other view of the anchor included), candidates all labelled rows but
    the anchor itself.
    """
    rows = 2 * n
    other = (np.arange(rows) + n) % rows
    eye = np.eye(rows, dtype=bool)
    unsup_pos = np.zeros((rows, rows), dtype=bool)
    unsup_pos[np.arange(rows), other] = True
    unsup_cand = ~eye

    lab_rows = np.concatenate([labelled, labelled])
    row_labels = np.concatenate([labels, labels])
    same = row_labels[:, None] == row_labels[None, :]
    sup_pos = same & lab_rows[:, None] & lab_rows[None, :] & ~eye
    sup_cand = lab_rows[:, None] & lab_rows[None, :] & ~eye
    return other, unsup_pos, unsup_cand, sup_pos, sup_cand, lab_rows


def masked_info_nce(feats: Tensor, pos_mask: np.ndarray, cand_mask: np.ndarray,
                    tau: float, anchor_weights: np.ndarray | None = None,
                    anchor_mask: np.ndarray | None = None) -> Tensor:
    """Mean over anchors of the per-anchor contrastive loss, each scaled by its
    anchor weight (the mixing proportion; 1 when no mixing happened)."""
    rows = feats.shape[0]
    if anchor_mask is None:
        anchor_mask = np.ones(rows, dtype=bool)
    if anchor_weights is None:
        anchor_weights = np.ones(rows)
    if not anchor_mask.any():
        raise ValueError("no anchor rows selected")
    if (pos_mask & ~cand_mask).any():
        raise ValueError("positives must be a subset of candidates")
    if (pos_mask[anchor_mask].sum(axis=1) == 0).any():
        raise ValueError("an anchor row has an empty positive set")

    sims = ad.mul(ad.matmul(feats, ad.transpose_(feats)), 1.0 / tau)
    gate = np.where(cand_mask, 0.0, -1e30)           # additive mask for the denominator
    lse = ad.logsumexp_last(ad.add(sims, gate), keepdims=True)
    logp = ad.sub(sims, lse)
    counts = np.maximum(pos_mask.sum(axis=1), 1)
    per_anchor = ad.mul(ad.sum_(ad.mul(logp, pos_mask.astype(np.float64)), axis=1), -1.0 / counts)
    w = np.where(anchor_mask, anchor_weights, 0.0)
    return ad.mul(ad.sum_(ad.mul(per_anchor, w)), 1.0 / anchor_mask.sum())


def soft_cross_entropy(logits: Tensor, targets: np.ndarray, tau: float,
                       anchor_mask: np.ndarray | None = None) -> Tensor:
    """Mean over selected rows of -sum(q log softmax(logits / tau))."""
    rows = logits.shape[0]
    if anchor_mask is None:
        anchor_mask = np.ones(rows, dtype=bool)
    if not anchor_mask.any():
        raise ValueError("no rows selected")
    scaled = ad.mul(logits, 1.0 / tau)
    logp = ad.sub(scaled, ad.logsumexp_last(scaled, keepdims=True))
    ce = ad.neg(ad.sum_(ad.mul(logp, np.where(anchor_mask[:, None], targets, 0.0)), axis=1))
    return ad.mul(ad.sum_(ce), 1.0 / anchor_mask.sum())


# -- pairwise dependence estimator ------------------------------------------

def _mi_grid(z_d, z_s, critic) -> Tensor:
    n = z_d.shape[0]
    rep = np.repeat(np.arange(n), n)
    til = np.tile(np.arange(n), n)
    pairs = ad.concat([ad.index_rows(z_d, rep), ad.index_rows(z_s, til)], axis=1)
    m = ad.reshape_(critic(pairs), (n, n))
    eye = np.eye(n)
    joint = ad.mul(ad.sum_(ad.mul(ad.neg(ad.softplus(ad.neg(m))), eye)), 1.0 / n)
    marg = ad.mul(ad.sum_(ad.mul(ad.softplus(m), 1.0 - eye)), 1.0 / (n * n - n))
    return ad.sub(joint, marg)


def _check_mi_batch(z_d, z_s) -> None:
    n = z_d.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to form marginal pairs, got {n}")
    if z_s.shape[0] != n:
        raise ValueError(f"feature batches disagree: {z_d.shape} vs {z_s.shape}")


def mi_js(z_d: Tensor, z_s: Tensor, critic) -> Tensor:
    """Jensen-Shannon-style dependence estimate over the batch pairing grid.

    Tiles an n x n matrix of critic scores on concatenated pairs; the diagonal
    holds joint pairs, everything else the shuffled marginals:
    value = mean_diag(-softplus(-M)) - mean_offdiag(softplus(M)).
    A zero critic gives exactly -2*log(2).  Fully differentiable; this is the
    form finite-difference checks run against.
    """
    _check_mi_batch(z_d, z_s)
    return _mi_grid(z_d, z_s, critic)


def mi_js_training(z_d: Tensor, z_s: Tensor, critic):
    """Adversarial form: (value, objective).

    The features pass through a gradient-reversal before the critic and the
    objective is the negated estimate, so one descent step on the objective
    moves critic parameters up the estimate (tighter bound) and encoder
    parameters down it (toward independence).  ``value`` carries the plain
    estimate for reporting.
    """
    _check_mi_batch(z_d, z_s)
    adv = _mi_grid(ad.grad_reverse(z_d), ad.grad_reverse(z_s), critic)
    value = ad.stop_grad(adv)       # same forward number, gradient-free
    objective = ad.neg(adv)
    return value, objective


# -- assembled batch objectives ---------------------------------------------

def _head_objective(rep_feats: Tensor, logits: Tensor, labels: np.ndarray,
                    labelled: np.ndarray, cfg: LossConfig,
                    unsup_targets: np.ndarray, sup_targets: np.ndarray,
                    alphas: np.ndarray, sup_pos_mode: str):
    """One head's balance-weighted rep + cls objective over 2n two-view rows.

    sup_pos_mode: 'class' pairs labelled anchors with same-class rows,
    'all-labelled' with every other labelled row (the shared-domain case).
    Returns (term, rep_value, cls_value, student_probs).
    """
    n = labels.shape[0]
    other, unsup_pos, unsup_cand, sup_pos, sup_cand, lab_rows = two_view_masks(n, labels, labelled)
    if sup_pos_mode == "all-labelled":
        sup_pos = sup_cand.copy()

    rep_u = masked_info_nce(rep_feats, unsup_pos, unsup_cand, cfg.tau_unsup,
                            anchor_weights=alphas)
    ce_u = soft_cross_entropy(logits, unsup_targets, cfg.tau_student)
    unsup = ad.add(rep_u, ce_u)

    if lab_rows.any():
        rep_s = masked_info_nce(rep_feats, sup_pos, sup_cand, cfg.tau_sup,
                                anchor_weights=alphas, anchor_mask=lab_rows)
        ce_s = soft_cross_entropy(logits, sup_targets, cfg.tau_student, anchor_mask=lab_rows)
        sup = ad.add(rep_s, ce_s)
    else:
        sup = ad.constant(0.0)

    term = ad.add(ad.mul(unsup, cfg.balance), ad.mul(sup, 1.0 - cfg.balance))
    rep_val = cfg.balance * float(rep_u.data) + (1 - cfg.balance) * (float(rep_s.data) if lab_rows.any() else 0.0)
    cls_val = cfg.balance * float(ce_u.data) + (1 - cfg.balance) * (float(ce_s.data) if lab_rows.any() else 0.0)
    student = ad.softmax_last(logits, cfg.tau_student)
    return term, rep_val, cls_val, student


def _teacher_targets(logits: Tensor, other: np.ndarray, tau: float) -> np.ndarray:
    """Sharpened predictions of the other view, as constants."""
    return sharpen_teacher(logits, tau).data[other]


def _one_hot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], k))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def simgcd_loss(rep_feats: Tensor, cls_feats: Tensor, prototypes: Tensor,
                labels: np.ndarray, labelled: np.ndarray, cfg: LossConfig,
                teacher_targets: np.ndarray | None = None) -> LossBundle:
    """Single-pathway objective: balance-weighted contrastive + classification
    terms plus the mean-entropy regularizer.

    ``rep_feats``/``cls_feats`` are 2n two-view rows; unlabelled rows take
    sharpened other-view predictions as classification targets, labelled rows
    one-hot labels (and their supervised contrastive term).  ``teacher_targets``
    pins the sharpened targets to precomputed constants, which keeps the loss
    the same function across perturbed evaluations in derivative checks.
    """
    cfg.validate()
    n = labels.shape[0]
    _assert_two_view(rep_feats, cls_feats, n, labelled)
    k = prototypes.shape[0]
    logits = cosine_logits(cls_feats, prototypes)
    other = (np.arange(2 * n) + n) % (2 * n)
    unsup_targets = (_teacher_targets(logits, other, cfg.tau_teacher)
                     if teacher_targets is None else teacher_targets)
    lab_idx = np.where(labelled, labels, 0)
    sup_targets = np.concatenate([_one_hot(lab_idx, k), _one_hot(lab_idx, k)])
    alphas = np.ones(2 * n)

    term, rep_val, cls_val, student = _head_objective(
        rep_feats, logits, labels, labelled, cfg,
        unsup_targets, sup_targets, alphas, sup_pos_mode="class")
    ent = entropy_reg(student)
    total = ad.add(term, ad.mul(ent, cfg.entropy_weight))
    return LossBundle(rep=rep_val, cls=cls_val, ent_sem=float(ent.data),
                      total=float(total.data), total_t=total, objective_t=total)


def hilo_total(sem_rep: Tensor, sem_logit_feats: Tensor, dom_rep: Tensor,
               proto_sem: Tensor, proto_dom: Tensor, critic,
               labels: np.ndarray, labelled: np.ndarray,
               domain_pseudo: np.ndarray, alphas: np.ndarray,
               cfg: LossConfig, use_mi: bool = True,
               adversarial: bool = False,
               teacher_targets: np.ndarray | None = None,
               mi_max_rows: int | None = None) -> LossBundle:
    """Dual-head objective: semantic and domain branches, each with the
    balance-weighted structure of the single-pathway loss, plus the pairwise
    dependence term and both mean-entropy regularizers.

    Inputs are 2n two-view rows of (possibly mixed) features; ``alphas`` carry
    each row's mixing proportion (1 when unmixed); ``domain_pseudo`` holds the
    per-sample batch-level cluster index used as the unlabelled domain target.
    Labelled anchors use smoothed one-hot targets on both heads (their true
    class; domain index 0).

    ``mi_max_rows`` caps the dependence grid: when 2n exceeds it, only the
    first ``mi_max_rows // 2`` samples (both views) feed the estimator.  The
    grid cost is quadratic in rows, and batches arrive in random order, so the
    leading slice is already a uniform subsample.
    """
    cfg.validate()
    n = labels.shape[0]
    _assert_two_view(sem_rep, sem_logit_feats, n, labelled)
    if dom_rep.shape[0] != 2 * n:
        raise ValueError(f"domain features must have 2n={2 * n} rows, got {dom_rep.shape[0]}")
    if alphas.shape[0] != 2 * n:
        raise ValueError(f"alphas must have 2n={2 * n} entries, got {alphas.shape[0]}")
    if ((alphas < 0) | (alphas > 1)).any():
        raise ValueError("alphas must lie in [0, 1]")
    k_s, k_d = proto_sem.shape[0], proto_dom.shape[0]
    other = (np.arange(2 * n) + n) % (2 * n)

    # semantic branch: smoothed one-hots for labelled rows, sharpened
    # other-view predictions for the rest
    sem_logits = cosine_logits(sem_logit_feats, proto_sem)
    sem_unsup = (_teacher_targets(sem_logits, other, cfg.tau_teacher)
                 if teacher_targets is None else teacher_targets)
    lab_idx = np.where(labelled, labels, 0)
    sem_sup = smooth_rows(np.concatenate([_one_hot(lab_idx, k_s), _one_hot(lab_idx, k_s)]), alphas)
    sem_term, sem_rep_val, sem_cls_val, sem_student = _head_objective(
        sem_rep, sem_logits, labels, labelled, cfg,
        sem_unsup, sem_sup, alphas, sup_pos_mode="class")
    ent_s = entropy_reg(sem_student)

    # domain branch: labelled rows are domain 0 (smoothed); unlabelled rows
    # take the batch-level cluster pseudo-label; supervised positives are all
    # other labelled rows (same domain by construction)
    dom_logits = cosine_logits(dom_rep, proto_dom)
    pseudo = np.concatenate([_one_hot(domain_pseudo, k_d), _one_hot(domain_pseudo, k_d)])
    dom_sup = smooth_rows(np.concatenate([_one_hot(np.zeros(n, dtype=np.int64), k_d)] * 2), alphas)
    dom_term, dom_rep_val, dom_cls_val, dom_student = _head_objective(
        dom_rep, dom_logits, labels, labelled, cfg,
        pseudo, dom_sup, alphas, sup_pos_mode="all-labelled")
    ent_d = entropy_reg(dom_student)

    w_d = cfg.domain_head_weight
    ent_combo = ad.add(ent_s, ad.mul(ent_d, w_d))
    core = ad.add(ad.add(sem_term, ad.mul(dom_term, w_d)),
                  ad.mul(ent_combo, cfg.entropy_weight_joint))
    mi_val = 0.0
    if use_mi:
        mi_d, mi_s = dom_rep, sem_rep
        if mi_max_rows is not None and 2 * n > mi_max_rows:
            m = max(1, mi_max_rows // 2)
            keep = np.concatenate([np.arange(m), n + np.arange(m)])
            mi_d, mi_s = ad.index_rows(dom_rep, keep), ad.index_rows(sem_rep, keep)
        if adversarial:
            value, objective = mi_js_training(mi_d, mi_s, critic)
            total = ad.add(core, value)
            objective_t = ad.add(core, objective)
        else:
            value = mi_js(mi_d, mi_s, critic)
            total = ad.add(core, value)
            objective_t = total
        mi_val = float(value.data)
    else:
        total = core
        objective_t = core

    sem_val = float(sem_term.data)
    dom_val = float(dom_term.data)
    return LossBundle(rep=sem_rep_val, cls=sem_cls_val, sem=sem_val, dom=dom_val,
                      mi=mi_val, ent_sem=float(ent_s.data), ent_dom=float(ent_d.data),
                      total=float(total.data), total_t=total, objective_t=objective_t)


def smooth_rows(one_hots: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Per-row label smoothing q_bar = alpha * q + (1 - alpha) / K."""
    k = one_hots.shape[1]
    a = alphas[:, None]
    return a * one_hots + (1.0 - a) / k


def _assert_two_view(rep_feats, cls_feats, n, labelled):
    if rep_feats.shape[0] != 2 * n or cls_feats.shape[0] != 2 * n:
        raise ValueError(f"expected 2n={2 * n} two-view rows, got {rep_feats.shape[0]} and {cls_feats.shape[0]}")
    if labelled.shape[0] != n:
        raise ValueError(f"labelled mask must have n={n} entries, got {labelled.shape[0]}")
