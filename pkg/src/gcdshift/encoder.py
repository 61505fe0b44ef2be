"""Micro transformer encoder with two feature taps.

Patch rows are linearly embedded, given learned positional embeddings, and
prefixed with a learned CLS token.  Pre-norm attention blocks follow.  A
domain projection head reads the CLS vector after an early block, a semantic
head after a late block; both heads emit unit-norm features, as does the raw
late CLS vector used against the semantic prototypes.  A small critic MLP
scoring (domain, semantic) feature pairs lives in the same parameter store.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "EncoderConfig", "EncoderState", "ForwardOutputs",
    "init_state", "embed", "forward_tokens", "forward", "cosine_logits",
    "critic_apply", "critic_param_count", "init_critic", "save_state", "load_state",
]


@dataclass
class EncoderConfig:
    num_layers: int = 4
    patch_count: int = 16
    input_dim: int = 8
    token_dim: int = 32
    head_count: int = 4
    mlp_hidden: int = 64
    proj_dim: int = 16
    head_hidden: int = 32
    critic_hidden: int = 32
    domain_tap_layer: int = 1      # 1-based block index feeding the domain head
    semantic_tap_layer: int = 4    # usually the last block
    k_s: int = 10                  # semantic prototype count
    k_d: int = 2                   # domain prototype count

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.token_dim % self.head_count != 0:
            raise ValueError(f"head_count={self.head_count} must divide token_dim={self.token_dim}")
        for name in ("patch_count", "input_dim", "token_dim", "mlp_hidden",
                     "proj_dim", "head_hidden", "critic_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("domain_tap_layer", "semantic_tap_layer"):
            v = getattr(self, name)
            if not (1 <= v <= self.num_layers):
                raise ValueError(f"{name}={v} must lie in [1, num_layers={self.num_layers}]")
        if self.k_s < 1 or self.k_d < 2:
            raise ValueError(f"need k_s >= 1 and k_d >= 2, got k_s={self.k_s}, k_d={self.k_d}")


@dataclass
class ForwardOutputs:
    z_d: Tensor        # (B, proj_dim) unit rows, domain head
    z_s: Tensor        # (B, proj_dim) unit rows, semantic head
    z_hat: Tensor      # (B, token_dim) unit rows, late CLS feature
    attn_cls: Tensor   # (B, patch_count) CLS->patch attention, rows sum to 1


@dataclass
class EncoderState:
    cfg: EncoderConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def tracked(self, tape: ad.Tape) -> dict[str, Tensor]:
        return {k: tape.leaf(v) for k, v in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params.items()}

    def copy(self) -> "EncoderState":
        return EncoderState(cfg=self.cfg, params={k: v.copy() for k, v in self.params.items()})

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())


def init_state(cfg: EncoderConfig, seed: int = 0) -> EncoderState:
    """Gaussian init scaled by 1/sqrt(fan-in); prototypes start unit-norm."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    D, H = cfg.token_dim, cfg.mlp_hidden
    p: dict[str, np.ndarray] = {}

    def w(shape, fan_in):
        return rng.normal(size=shape) / np.sqrt(fan_in)

    p["embed.w"] = w((cfg.input_dim, D), cfg.input_dim)
    p["embed.b"] = np.zeros(D)
    p["embed.pos"] = w((cfg.patch_count, D), D)
    p["embed.cls"] = w((D,), D)
    for i in range(cfg.num_layers):
        pre = f"block{i}."
        for nm in ("wq", "wk", "wv", "wo"):
            p[pre + nm] = w((D, D), D)
            if nm != "wk":
                # no key bias: a shared key offset only adds a per-query
                # constant to every score row and cancels in the softmax
                p[pre + nm.replace("w", "b")] = np.zeros(D)
        p[pre + "ln1.g"] = np.ones(D)
        p[pre + "ln1.b"] = np.zeros(D)
        p[pre + "ln2.g"] = np.ones(D)
        p[pre + "ln2.b"] = np.zeros(D)
        p[pre + "mlp.w1"] = w((D, H), D)
        p[pre + "mlp.b1"] = np.zeros(H)
        p[pre + "mlp.w2"] = w((H, D), H)
        p[pre + "mlp.b2"] = np.zeros(D)
    for head in ("head_dom", "head_sem"):
        p[f"{head}.w1"] = w((D, cfg.head_hidden), D)
        p[f"{head}.b1"] = np.zeros(cfg.head_hidden)
        p[f"{head}.w2"] = w((cfg.head_hidden, cfg.proj_dim), cfg.head_hidden)
        p[f"{head}.b2"] = np.zeros(cfg.proj_dim)

    def unit_rows(a):
        return a / (np.linalg.norm(a, axis=1, keepdims=True) + ad.EPS_NORM)

    p["proto_sem"] = unit_rows(rng.normal(size=(cfg.k_s, D)))
    p["proto_dom"] = unit_rows(rng.normal(size=(cfg.k_d, cfg.proj_dim)))

    p.update(init_critic(2 * cfg.proj_dim, cfg.critic_hidden, rng))
    return EncoderState(cfg=cfg, params=p)


def init_critic(in_dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Parameters for a standalone pair critic usable with critic_apply."""
    def w(shape, fan_in):
        return rng.normal(size=shape) / np.sqrt(fan_in)

    return {
        "critic.w1": w((in_dim, hidden), in_dim), "critic.b1": np.zeros(hidden),
        "critic.w2": w((hidden, hidden), hidden), "critic.b2": np.zeros(hidden),
        "critic.w3": w((hidden, 1), hidden), "critic.b3": np.zeros(1),
    }


# -- forward ---------------------------------------------------------------

def embed(params: dict[str, Tensor], cfg: EncoderConfig, x) -> Tensor:
    """(B, P, input_dim) patches -> (B, P+1, token_dim) tokens with CLS first."""
    x = ad.constant(x) if not isinstance(x, Tensor) else x
    if x.ndim != 3 or x.shape[1] != cfg.patch_count or x.shape[2] != cfg.input_dim:
        raise ValueError(f"expected patches of shape (B, {cfg.patch_count}, {cfg.input_dim}), got {x.shape}")
    B = x.shape[0]
    tok = ad.add(ad.add(ad.matmul(x, params["embed.w"]), params["embed.b"]), params["embed.pos"])
    cls = ad.broadcast_to_(ad.reshape_(params["embed.cls"], (1, 1, cfg.token_dim)),
                           (B, 1, cfg.token_dim))
    return ad.concat([cls, tok], axis=1)


def _attention(params, pre: str, cfg: EncoderConfig, x: Tensor):
    """Multi-head self-attention; returns (output, CLS attention row over patches)."""
    B, N, D = x.shape
    h = cfg.head_count
    dh = D // h
    q = ad.linear(x, params[pre + "wq"], params[pre + "bq"])
    k = ad.linear(x, params[pre + "wk"])
    v = ad.linear(x, params[pre + "wv"], params[pre + "bv"])

    def split(t):  # (B, N, D) -> (B, h, N, dh)
        return ad.transpose_(ad.reshape_(t, (B, N, h, dh)), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = ad.mul(ad.matmul(q, ad.transpose_(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = ad.softmax_last(scores)                       # (B, h, N, N)
    out = ad.matmul(attn, v)                             # (B, h, N, dh)
    out = ad.reshape_(ad.transpose_(out, (0, 2, 1, 3)), (B, N, D))
    out = ad.linear(out, params[pre + "wo"], params[pre + "bo"])
    # CLS-query attention over patch keys, averaged over heads, renormalized
    cls_row = ad.slice_(attn, (slice(None), slice(None), 0, slice(1, None)))  # (B, h, P)
    cls_row = ad.mean_(cls_row, axis=1)                                       # (B, P)
    cls_row = ad.div(cls_row, ad.sum_(cls_row, axis=-1, keepdims=True))
    return out, cls_row


def _block(params, i: int, cfg: EncoderConfig, x: Tensor):
    pre = f"block{i}."
    normed = ad.layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
    attn_out, cls_row = _attention(params, pre, cfg, normed)
    x = ad.add(x, attn_out)
    normed = ad.layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
    mlp = ad.linear(ad.gelu(ad.linear(normed, params[pre + "mlp.w1"], params[pre + "mlp.b1"])),
                    params[pre + "mlp.w2"], params[pre + "mlp.b2"])
    return ad.add(x, mlp), cls_row


def _head(params, name: str, x: Tensor) -> Tensor:
    hid = ad.gelu(ad.linear(x, params[f"{name}.w1"], params[f"{name}.b1"]))
    return ad.l2_normalize(ad.linear(hid, params[f"{name}.w2"], params[f"{name}.b2"]))


def forward_tokens(params: dict[str, Tensor], cfg: EncoderConfig, tokens: Tensor) -> ForwardOutputs:
    """Run the blocks on ready-made tokens (the patch-mixing entry point)."""
    x = tokens
    tap_d = tap_s = None
    attn_cls = None
    for i in range(cfg.num_layers):
        x, cls_row = _block(params, i, cfg, x)
        if not np.isfinite(x.data).all():
            raise FloatingPointError(f"non-finite activation after block {i + 1}")
        if i + 1 == cfg.domain_tap_layer:
            tap_d = x
        if i + 1 == cfg.semantic_tap_layer:
            tap_s = x
        attn_cls = cls_row
    cls_d = ad.slice_(tap_d, (slice(None), 0, slice(None)))
    cls_s = ad.slice_(tap_s, (slice(None), 0, slice(None)))
    return ForwardOutputs(
        z_d=_head(params, "head_dom", cls_d),
        z_s=_head(params, "head_sem", cls_s),
        z_hat=ad.l2_normalize(cls_s),
        attn_cls=attn_cls,
    )


def forward(params: dict[str, Tensor], cfg: EncoderConfig, x) -> ForwardOutputs:
    return forward_tokens(params, cfg, embed(params, cfg, x))


def forward_numpy(state: EncoderState, x: np.ndarray,
                  cfg: EncoderConfig | None = None) -> ForwardOutputs:
    """No-grad forward on constant parameters (inference fast path).

    `cfg` overrides the stored config, e.g. to move the feature taps.
    """
    return forward(state.constants(), cfg or state.cfg, x)


def cosine_logits(feats: Tensor, prototypes: Tensor) -> Tensor:
    """Similarity logits between unit-norm features and unit-norm prototype rows."""
    if feats.shape[-1] != prototypes.shape[-1]:
        raise ValueError(f"feature dim {feats.shape[-1]} does not match prototype dim {prototypes.shape[-1]}")
    return ad.matmul(feats, ad.transpose_(prototypes))


def critic_apply(params: dict[str, Tensor], pairs: Tensor) -> Tensor:
    """Score concatenated (domain, semantic) feature pairs; (M, 2*proj) -> (M,)."""
    # GELU rather than ReLU: zero-initialized biases put dead-row ReLU
    # pre-activations exactly on the kink, where derivative checks diverge
    h = ad.gelu(ad.linear(pairs, params["critic.w1"], params["critic.b1"]))
    h = ad.gelu(ad.linear(h, params["critic.w2"], params["critic.b2"]))
    out = ad.linear(h, params["critic.w3"], params["critic.b3"])
    return ad.reshape_(out, (out.shape[0],))


def critic_param_count(cfg: EncoderConfig) -> int:
    ch = cfg.critic_hidden
    return (2 * cfg.proj_dim * ch + ch) + (ch * ch + ch) + (ch + 1)


def domain_head_param_count(cfg: EncoderConfig) -> int:
    """Complexity proxy: parameters of the domain projection head + prototypes."""
    return (cfg.token_dim * cfg.head_hidden + cfg.head_hidden
            + cfg.head_hidden * cfg.proj_dim + cfg.proj_dim
            + cfg.k_d * cfg.proj_dim)


def flatten_params(params: dict[str, np.ndarray]):
    """Concatenate all parameters into one vector plus a reconstruction spec."""
    spec = [(k, v.shape, v.size) for k, v in params.items()]
    vec = np.concatenate([params[k].reshape(-1) for k, _, _ in spec]) if spec else np.empty(0)
    return vec, spec


def unflatten_params(vec: np.ndarray, spec) -> dict[str, np.ndarray]:
    out = {}
    at = 0
    for k, shape, size in spec:
        out[k] = vec[at:at + size].reshape(shape)
        at += size
    return out


def tracked_views(tape: ad.Tape, vec_leaf: Tensor, spec) -> dict[str, Tensor]:
    """Carve one tracked parameter vector into named tensors (for grad checks)."""
    out = {}
    at = 0
    for k, shape, size in spec:
        out[k] = ad.reshape_(ad.slice_(vec_leaf, slice(at, at + size)), shape)
        at += size
    return out


# -- serialization ---------------------------------------------------------

_HEADER = "gcdshift-params v1"
_CFG_FIELDS = ("num_layers", "patch_count", "input_dim", "token_dim", "head_count",
               "mlp_hidden", "proj_dim", "head_hidden", "critic_hidden",
               "domain_tap_layer", "semantic_tap_layer", "k_s", "k_d")


def save_state(state: EncoderState, path: str) -> None:
    """Text checkpoint: header, config line, then one 'name shape values' line
    per parameter; %.17g keeps float64 round-trips exact."""
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        fh.write(" ".join(str(getattr(state.cfg, f)) for f in _CFG_FIELDS) + "\n")
        for name, arr in state.params.items():
            dims = ",".join(str(d) for d in arr.shape)
            vals = " ".join("%.17g" % v for v in arr.reshape(-1))
            fh.write(f"{name} {dims} {vals}\n")


def load_state(path: str) -> EncoderState:
    with open(path) as fh:
        if fh.readline().strip() != _HEADER:
            raise ValueError(f"not a parameter file: bad header in {path}")
        cfg_vals = fh.readline().split()
        if len(cfg_vals) != len(_CFG_FIELDS):
            raise ValueError(f"malformed config line in {path}")
        cfg = EncoderConfig(**{f: int(v) for f, v in zip(_CFG_FIELDS, cfg_vals)})
        params: dict[str, np.ndarray] = {}
        for line in fh:
            parts = line.split()
            if len(parts) < 2:
                continue
            name, dims = parts[0], parts[1]
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            arr = np.array(parts[2:], dtype=np.float64)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"parameter {name!r} has {arr.size} values for shape {shape} in {path}")
            params[name] = arr.reshape(shape)
    state = EncoderState(cfg=cfg, params=params)
    expect = set(init_state(cfg, seed=0).params)
    if set(params) != expect:
        missing = expect - set(params)
        raise ValueError(f"parameter file {path} missing entries: {sorted(missing)[:4]}")
    return state
