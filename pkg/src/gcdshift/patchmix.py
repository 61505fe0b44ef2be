"""Embedding-space patch mixing: per-patch Beta proportions, convex token
mixing that never touches the CLS row, the attention-weighted semantic
proportion used to scale losses and smooth labels, and the batch driver that
produces two mixed views per sample."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import encoder as enc

__all__ = [
    "DEFAULT_BETA_PARAMS", "MixSpec", "MixedBatch",
    "sample_beta", "mix", "alpha", "smooth_label", "make_mixed_views",
]

# symmetric concentration log(1+e), the softplus of 1
DEFAULT_BETA_PARAMS = (math.log(1.0 + math.e), math.log(1.0 + math.e))


@dataclass
class MixSpec:
    """How one anchor row was mixed."""
    partner: int
    beta: np.ndarray
    alpha_s: float
    beta_params: tuple[float, float]


@dataclass
class MixedBatch:
    """Two mixed views of a batch, view-major: row i and i+n pair up."""
    outputs: enc.ForwardOutputs
    alphas: np.ndarray            # (2n,)
    specs: list[MixSpec]          # length 2n, same row order


def sample_beta(patch_count: int, beta_params, rng: np.random.Generator) -> np.ndarray:
    """Independent per-patch mixing proportions."""
    a, b = beta_params
    if a <= 0 or b <= 0:
        raise ValueError(f"Beta parameters must be positive, got {beta_params}")
    if patch_count < 1:
        raise ValueError(f"patch_count must be >= 1, got {patch_count}")
    return rng.beta(a, b, size=patch_count)


def mix(tokens_x, tokens_xp, beta: np.ndarray) -> Tensor:
    """Per-patch convex combination beta*x + (1-beta)*x' on rows 1..P; row 0
    (CLS) is kept from the anchor."""
    tx = tokens_x if isinstance(tokens_x, Tensor) else ad.constant(tokens_x)
    tp = tokens_xp if isinstance(tokens_xp, Tensor) else ad.constant(tokens_xp)
    if tx.shape != tp.shape:
        raise ValueError(f"token shapes disagree: {tx.shape} vs {tp.shape}")
    if tx.ndim != 2:
        raise ValueError(f"expected (P+1, dim) token matrices, got shape {tx.shape}")
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (tx.shape[0] - 1,):
        raise ValueError(f"beta must cover the {tx.shape[0] - 1} patch rows, got shape {beta.shape}")
    if ((beta < 0) | (beta > 1)).any():
        raise ValueError("beta entries must lie in [0, 1]")
    w = np.concatenate([[1.0], beta])[:, None]
    return ad.add(ad.mul(tx, w), ad.mul(tp, 1.0 - w))


def alpha(beta: np.ndarray, s: np.ndarray, s_prime: np.ndarray) -> float:
    """Semantic proportion beta.s / (beta.s + (1-beta).s'); 0.5 when the
    denominator vanishes."""
    beta = np.asarray(beta, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    s_prime = np.asarray(s_prime, dtype=np.float64)
    if not (beta.shape == s.shape == s_prime.shape):
        raise ValueError(f"shape mismatch: beta {beta.shape}, s {s.shape}, s' {s_prime.shape}")
    if (s < 0).any() or (s_prime < 0).any():
        raise ValueError("attention scores must be non-negative")
    for name, v in (("s", s), ("s'", s_prime)):
        if abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} must sum to 1 within 1e-6, got {v.sum()}")
    num = float(beta @ s)
    den = num + float((1.0 - beta) @ s_prime)
    if den < 1e-12:
        return 0.5
    return num / den


def smooth_label(q: np.ndarray, alpha_s: float, k: int) -> np.ndarray:
    """q_bar = alpha*q + (1-alpha)/k, a proper distribution with floor (1-alpha)/k."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (k,) or not np.isclose(q.sum(), 1.0) or set(np.unique(q)) - {0.0, 1.0}:
        raise ValueError("q must be a one-hot vector of length k")
    if not (0.0 <= alpha_s <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha_s}")
    return alpha_s * q + (1.0 - alpha_s) / k


def _draw_partners(n: int, unlabelled: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    pool = np.where(unlabelled)[0]
    if pool.size == 0:
        raise ValueError("patch mixing needs at least one unlabelled sample in the batch")
    partners = np.empty(n, dtype=np.int64)
    for i in range(n):
        avoid_self = unlabelled[i] and pool.size > 1
        cand = pool[pool != i] if avoid_self else pool
        partners[i] = cand[rng.integers(cand.size)]
    return partners


def make_mixed_views(params: dict[str, Tensor], cfg: enc.EncoderConfig,
                     state: enc.EncoderState, view1: np.ndarray, view2: np.ndarray,
                     unlabelled: np.ndarray, rng: np.random.Generator,
                     beta_params=DEFAULT_BETA_PARAMS,
                     attn_scores: tuple[np.ndarray, np.ndarray] | None = None,
                     mix_fraction: float = 1.0) -> MixedBatch:
    """Mix both augmented views in embedding space and run the mixed forward.

    Partners are drawn uniformly from the unlabelled batch members (self only
    when no other choice exists); each view draws its own partners and betas.
    Attention scores come from an unmixed, gradient-free pass of each view, so
    the proportion does not depend on the mix it describes; ``attn_scores``
    supplies those per-view (n, P) rows precomputed (a caller that already ran
    the unmixed forward skips a second one), otherwise they are computed here.

    ``mix_fraction`` is the per-row chance of mixing at all.  A row that skips
    keeps beta at 1 (the identity mix), pairs with itself, and gets proportion
    1, so its losses reduce to the unmixed form; trained from scratch, a batch
    where every row is half someone else never bootstraps usable teachers.
    Draw order per view: the skip coins, then all partner indices, then all
    beta vectors.
    """
    if not (0.0 <= mix_fraction <= 1.0):
        raise ValueError(f"mix_fraction must lie in [0, 1], got {mix_fraction}")
    n = view1.shape[0]
    if view2.shape != view1.shape:
        raise ValueError(f"view shapes disagree: {view1.shape} vs {view2.shape}")
    if unlabelled.shape != (n,):
        raise ValueError(f"unlabelled mask must have {n} entries, got {unlabelled.shape}")
    P = cfg.patch_count
    if attn_scores is not None and any(s.shape != (n, P) for s in attn_scores):
        raise ValueError(f"attention scores must be two (n={n}, P={P}) arrays")

    mixed_views = []
    alphas = np.empty(2 * n)
    specs: list[MixSpec] = []
    for v, view in enumerate((view1, view2)):
        scores = (attn_scores[v] if attn_scores is not None
                  else enc.forward_numpy(state, view).attn_cls.data)  # (n, P), rows sum to 1
        tokens = enc.embed(params, cfg, view)                     # (n, P+1, D) tracked
        mix_row = rng.random(n) < mix_fraction
        partners = _draw_partners(n, unlabelled, rng)
        betas = rng.beta(beta_params[0], beta_params[1], size=(n, P))
        partners = np.where(mix_row, partners, np.arange(n))
        betas[~mix_row] = 1.0
        w = np.concatenate([np.ones((n, 1)), betas], axis=1)[:, :, None]
        mixed = ad.add(ad.mul(tokens, w), ad.mul(ad.index_rows(tokens, partners), 1.0 - w))
        mixed_views.append(mixed)
        for i in range(n):
            a = alpha(betas[i], scores[i], scores[partners[i]])
            alphas[v * n + i] = a
            specs.append(MixSpec(partner=int(partners[i]), beta=betas[i],
                                 alpha_s=a, beta_params=tuple(beta_params)))

    outputs = enc.forward_tokens(params, cfg, ad.concat(mixed_views, axis=0))
    return MixedBatch(outputs=outputs, alphas=alphas, specs=specs)
