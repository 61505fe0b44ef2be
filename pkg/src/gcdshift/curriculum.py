"""Curriculum sampling: a per-epoch domain pseudo-partition of the unlabelled
pool and the three-branch time-dependent weight that delays predicted
unseen-domain samples until after the switch epoch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ss_kmeans

__all__ = ["CurriculumConfig", "DomainPartition", "partition_domains",
           "sample_weight", "dataset_weights", "draw_batch"]


@dataclass
class CurriculumConfig:
    switch_epoch: int = 24          # epochs strictly after this get the late weight
    early_weight: float = 0.0       # predicted-unseen weight before the switch
    late_weight: float = 0.05       # predicted-unseen weight after the switch
    partition_k: int = 2            # cluster count for the domain split
    auto_early_weight: bool = False  # early weight = |labelled| / |predicted unseen| instead

    def validate(self) -> None:
        if self.switch_epoch < 0:
            raise ValueError(f"switch_epoch must be >= 0, got {self.switch_epoch}")
        if self.early_weight < 0 or self.late_weight < 0:
            raise ValueError("curriculum weights must be non-negative")
        if self.partition_k < 2:
            raise ValueError(f"partition_k must be >= 2, got {self.partition_k}")


@dataclass
class DomainPartition:
    """Unlabelled indices split by the domain clustering; labelled samples are
    forced into cluster 0, so predicted-seen means sharing their cluster."""
    seen: np.ndarray       # predicted seen-domain unlabelled indices
    unseen: np.ndarray     # predicted unseen-domain unlabelled indices

    def is_unseen(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        mask[self.unseen] = True
        return mask


def partition_domains(z_d: np.ndarray, labelled_idx: np.ndarray, k: int = 2,
                      seed: int = 0) -> DomainPartition:
    """Cluster every sample's domain feature with the labelled ones pinned to
    cluster 0; unlabelled members of cluster 0 are predicted seen-domain."""
    labelled_idx = np.asarray(labelled_idx, dtype=np.int64)
    forced = {int(i): 0 for i in labelled_idx}
    result = ss_kmeans(z_d, k, forced, seed=seed)
    lab_mask = np.zeros(z_d.shape[0], dtype=bool)
    lab_mask[labelled_idx] = True
    unlab = np.where(~lab_mask)[0]
    in_zero = result.assignments[unlab] == 0
    return DomainPartition(seen=unlab[in_zero], unseen=unlab[~in_zero])


def _early_weight(cfg: CurriculumConfig, labelled_count: int, unseen_count: int) -> float:
    if not cfg.auto_early_weight:
        return cfg.early_weight
    if unseen_count == 0:
        return cfg.late_weight
    return labelled_count / unseen_count


def sample_weight(idx: int, t: int, labelled_mask: np.ndarray,
                  partition: DomainPartition, cfg: CurriculumConfig) -> float:
    """Three-branch weight: 1 for labelled; |labelled|/|predicted seen| for
    predicted seen-domain; the early weight switching to the late weight
    strictly after the switch epoch for predicted unseen-domain."""
    cfg.validate()
    if labelled_mask[idx]:
        return 1.0
    labelled_count = int(labelled_mask.sum())
    if idx in partition.seen:
        seen_count = partition.seen.size
        if seen_count == 0:
            return 1.0
        return labelled_count / seen_count
    if idx in partition.unseen:
        if t > cfg.switch_epoch:
            return cfg.late_weight
        return _early_weight(cfg, labelled_count, partition.unseen.size)
    raise ValueError(f"sample {idx} is unlabelled but missing from the partition")


def dataset_weights(n: int, t: int, labelled_mask: np.ndarray,
                    partition: DomainPartition, cfg: CurriculumConfig) -> np.ndarray:
    """Vectorized weights for all n samples."""
    cfg.validate()
    if labelled_mask.shape != (n,):
        raise ValueError(f"labelled mask must have {n} entries, got {labelled_mask.shape}")
    covered = labelled_mask.sum() + partition.seen.size + partition.unseen.size
    if covered != n:
        raise ValueError(f"partition covers {covered} of {n} samples")
    w = np.empty(n)
    w[labelled_mask] = 1.0
    labelled_count = int(labelled_mask.sum())
    seen_w = labelled_count / partition.seen.size if partition.seen.size else 1.0
    w[partition.seen] = seen_w
    if t > cfg.switch_epoch:
        w[partition.unseen] = cfg.late_weight
    else:
        w[partition.unseen] = _early_weight(cfg, labelled_count, partition.unseen.size)
    return w


def draw_batch(weights: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with replacement, probability proportional to weight."""
    weights = np.asarray(weights, dtype=np.float64)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("all sampling weights are zero")
    return rng.choice(weights.size, size=batch_size, replace=True, p=weights / total)
