"""Synthetic domain-shifted datasets for category discovery.

Each sample is a P x input_dim patch matrix.  Classes are prototype vectors on
a sphere; patches add a per-position offset and unit Gaussian jitter.  Domains
other than 0 apply a random per-domain affine style (diagonal gain + bias) and
one of five corruption kinds at severity 1..5.  Only old-class samples from
domain 0 may be labelled.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TaskConfig", "Dataset", "Sample", "CORRUPTION_KINDS",
    "generate", "corrupt", "save_dataset", "load_dataset",
]

CORRUPTION_KINDS = ("gaussian", "shot", "impulse", "speckle", "fog")

# severity schedules, index = severity - 1
GAUSSIAN_SIGMA = (0.04, 0.06, 0.08, 0.09, 0.10)
SHOT_RATE = (60.0, 25.0, 12.0, 5.0, 3.0)          # photon budget; lower = noisier
IMPULSE_FRACTION = (0.03, 0.06, 0.09, 0.17, 0.27)
SPECKLE_SIGMA = (0.06, 0.09, 0.12, 0.16, 0.20)
FOG_STRENGTH = (0.30, 0.50, 0.70, 0.90, 1.10)

SPLIT_LABELLED = "labelled"
SPLIT_SEEN = "unlabelled-seen-domain"
SPLIT_UNSEEN = "unlabelled-unseen-domain"


@dataclass
class TaskConfig:
    num_classes: int = 10
    num_old: int = 5
    num_domains: int = 2
    samples_per_class_per_domain: int = 100
    patches: int = 16
    input_dim: int = 8
    class_separation: float = 4.0
    jitter: float = 1.0
    style_strength: float = 1.0
    corruption: str = "gaussian"           # applied to every domain > 0
    corruption_severity: int = 3
    labelled_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.num_old <= self.num_classes):
            raise ValueError(f"num_old={self.num_old} must lie in (0, num_classes={self.num_classes}]")
        if self.num_domains < 1:
            raise ValueError(f"num_domains must be >= 1, got {self.num_domains}")
        if self.patches < 1 or self.input_dim < 1:
            raise ValueError("patches and input_dim must be positive")
        if self.samples_per_class_per_domain < 1:
            raise ValueError("samples_per_class_per_domain must be positive")
        if not (0.0 < self.labelled_fraction <= 1.0):
            raise ValueError(f"labelled_fraction={self.labelled_fraction} must lie in (0, 1]")
        if self.corruption not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {self.corruption!r}; choose from {CORRUPTION_KINDS}")
        if not (1 <= self.corruption_severity <= 5):
            raise ValueError(f"corruption_severity must be 1..5, got {self.corruption_severity}")
        if self.class_separation < 0 or self.jitter < 0 or self.style_strength < 0:
            raise ValueError("class_separation, jitter and style_strength must be non-negative")


@dataclass
class Sample:
    patches: np.ndarray    # (P, input_dim)
    class_id: int
    domain_id: int
    labelled: bool

    @property
    def split(self) -> str:
        if self.labelled:
            return SPLIT_LABELLED
        return SPLIT_SEEN if self.domain_id == 0 else SPLIT_UNSEEN


@dataclass
class Dataset:
    patches: np.ndarray        # (N, P, input_dim)
    class_ids: np.ndarray      # (N,)
    domain_ids: np.ndarray     # (N,)
    labelled: np.ndarray       # (N,) bool
    num_classes: int
    num_old: int
    num_domains: int
    meta: TaskConfig | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.patches.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(self.patches[i], int(self.class_ids[i]),
                      int(self.domain_ids[i]), bool(self.labelled[i]))

    @property
    def old_classes(self) -> set[int]:
        return set(range(self.num_old))

    def split_of(self, i: int) -> str:
        return self.sample(i).split

    def counts(self) -> dict[str, int]:
        lab = int(self.labelled.sum())
        seen_u = int(((self.domain_ids == 0) & ~self.labelled).sum())
        unseen = int((self.domain_ids != 0).sum())
        return {SPLIT_LABELLED: lab, SPLIT_SEEN: seen_u, SPLIT_UNSEEN: unseen}


# -- corruption kinds ------------------------------------------------------

def _severity(schedule, severity: int) -> float:
    if not (1 <= severity <= 5):
        raise ValueError(f"severity must be 1..5, got {severity}")
    return schedule[severity - 1]


def _normalize01(x: np.ndarray):
    lo = x.min(axis=(-2, -1), keepdims=True)
    hi = x.max(axis=(-2, -1), keepdims=True)
    span = np.maximum(hi - lo, 1e-12)
    return (x - lo) / span, lo, span


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def _diamond_square(side_pow2: int, rng: np.random.Generator) -> np.ndarray:
    """Plasma fractal on a (side+1) x (side+1) lattice, normalized to [0, 1].
    Displacement amplitude halves at each subdivision level."""
    s = side_pow2
    g = np.zeros((s + 1, s + 1))
    g[0, 0], g[0, s], g[s, 0], g[s, s] = rng.normal(0, 1, 4)
    step = s
    amp = 1.0
    while step > 1:
        half = step // 2
        # diamond: centers of squares
        for r in range(half, s + 1, step):
            for c in range(half, s + 1, step):
                avg = (g[r - half, c - half] + g[r - half, c + half]
                       + g[r + half, c - half] + g[r + half, c + half]) / 4.0
                g[r, c] = avg + amp * rng.normal()
        # square: edge midpoints
        for r in range(0, s + 1, half):
            start = half if (r // half) % 2 == 0 else 0
            for c in range(start, s + 1, step):
                total, cnt = 0.0, 0
                for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr <= s and 0 <= cc <= s:
                        total += g[rr, cc]
                        cnt += 1
                g[r, c] = total / cnt + amp * rng.normal()
        step = half
        amp *= 0.5
    lo, hi = g.min(), g.max()
    return (g - lo) / max(hi - lo, 1e-12)


def _fog_field(patches: int, rng: np.random.Generator) -> np.ndarray:
    """One fog value per patch position in [0, 1]."""
    grid = int(np.ceil(np.sqrt(patches)))
    side = _next_pow2(grid)
    field = _diamond_square(side, rng)[:grid, :grid].reshape(-1)[:patches]
    return field


def corrupt(patches, kind: str, severity: int, rng: np.random.Generator) -> np.ndarray:
    """Apply one corruption kind at the given severity.

    Accepts a single (P, input_dim) sample or a (N, P, input_dim) batch;
    distortion (MSE against the input) grows strictly with severity.
    """
    x = np.asarray(patches, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"patches must be (P, d) or (N, P, d), got shape {np.asarray(patches).shape}")

    if kind == "gaussian":
        sigma = _severity(GAUSSIAN_SIGMA, severity)
        out = x + rng.normal(0.0, sigma, x.shape)
    elif kind == "shot":
        rate = _severity(SHOT_RATE, severity)
        x01, lo, span = _normalize01(x)
        out = lo + span * rng.poisson(x01 * rate) / rate
    elif kind == "impulse":
        frac = _severity(IMPULSE_FRACTION, severity)
        lo = x.min(axis=(-2, -1), keepdims=True)
        hi = x.max(axis=(-2, -1), keepdims=True)
        hit = rng.random(x.shape) < frac
        salt = rng.random(x.shape) < 0.5
        out = np.where(hit, np.where(salt, hi, lo), x)
    elif kind == "speckle":
        sigma = _severity(SPECKLE_SIGMA, severity)
        out = x * (1.0 + rng.normal(0.0, sigma, x.shape))
    elif kind == "fog":
        t = _severity(FOG_STRENGTH, severity)
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            field = _fog_field(x.shape[1], rng)
            out[i] = x[i] + t * field[:, None]
    else:
        raise ValueError(f"unknown corruption kind {kind!r}; choose from {CORRUPTION_KINDS}")
    return out[0] if single else out


# -- generation ------------------------------------------------------------

def generate(cfg: TaskConfig) -> Dataset:
    """Deterministic dataset under cfg.seed; see module docstring for the model."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C, P, D = cfg.num_classes, cfg.patches, cfg.input_dim

    protos = rng.normal(size=(C, D))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True) + 1e-12
    protos *= cfg.class_separation
    offsets = rng.normal(size=(P, D))  # shared patch-position identity

    gains = rng.normal(size=(cfg.num_domains, D))
    biases = rng.normal(size=(cfg.num_domains, D))

    spc = cfg.samples_per_class_per_domain
    blocks, class_ids, domain_ids = [], [], []
    for dom in range(cfg.num_domains):
        for cls in range(C):
            x = protos[cls][None, None, :] + offsets[None, :, :] \
                + rng.normal(0.0, cfg.jitter, (spc, P, D))
            if dom > 0:
                x = x * (1.0 + cfg.style_strength * gains[dom]) + cfg.style_strength * biases[dom]
                x = corrupt(x, cfg.corruption, cfg.corruption_severity, rng)
            blocks.append(x)
            class_ids.append(np.full(spc, cls))
            domain_ids.append(np.full(spc, dom))
    patches = np.concatenate(blocks, axis=0)
    class_ids = np.concatenate(class_ids)
    domain_ids = np.concatenate(domain_ids)

    # labelled subset: old classes, domain 0, total = floor(f * |C1| * spc),
    # spread as evenly as possible over old classes
    labelled = np.zeros(len(class_ids), dtype=bool)
    total_lab = int(np.floor(cfg.labelled_fraction * cfg.num_old * spc))
    base, extra = divmod(total_lab, cfg.num_old)
    for cls in range(cfg.num_old):
        want = base + (1 if cls < extra else 0)
        pool = np.flatnonzero((class_ids == cls) & (domain_ids == 0))
        pick = rng.permutation(pool)[:want]
        labelled[pick] = True

    return Dataset(patches=patches, class_ids=class_ids.astype(np.int64),
                   domain_ids=domain_ids.astype(np.int64), labelled=labelled,
                   num_classes=C, num_old=cfg.num_old, num_domains=cfg.num_domains,
                   meta=cfg)


# -- serialization ---------------------------------------------------------

_HEADER = "gcdshift-dataset v1"


def save_dataset(ds: Dataset, path: str) -> None:
    """Line-oriented text export; lossless float round-trip via %.17g.

    Line 1: header with N, P, input_dim, num_classes, num_old, num_domains.
    Then one line per sample: split class_id domain_id labelled v1 .. v_{P*d}.
    """
    n, p, d = ds.patches.shape
    buf = io.StringIO()
    buf.write(f"{_HEADER} {n} {p} {d} {ds.num_classes} {ds.num_old} {ds.num_domains}\n")
    for i in range(n):
        s = ds.sample(i)
        vals = " ".join("%.17g" % v for v in s.patches.reshape(-1))
        buf.write(f"{s.split} {s.class_id} {s.domain_id} {int(s.labelled)} {vals}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        head = fh.readline().split()
        if " ".join(head[:2]) != _HEADER:
            raise ValueError(f"not a dataset file: bad header in {path}")
        n, p, d, num_classes, num_old, num_domains = (int(v) for v in head[2:8])
        patches = np.empty((n, p, d))
        class_ids = np.empty(n, dtype=np.int64)
        domain_ids = np.empty(n, dtype=np.int64)
        labelled = np.empty(n, dtype=bool)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != 4 + p * d:
                raise ValueError(f"malformed record on line {i + 2} of {path}")
            class_ids[i] = int(parts[1])
            domain_ids[i] = int(parts[2])
            labelled[i] = bool(int(parts[3]))
            patches[i] = np.array(parts[4:], dtype=np.float64).reshape(p, d)
    return Dataset(patches=patches, class_ids=class_ids, domain_ids=domain_ids,
                   labelled=labelled, num_classes=num_classes, num_old=num_old,
                   num_domains=num_domains)
