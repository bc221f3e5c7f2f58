"""Learned forward models of the probe search and their composition with the
differentiable planner into the shadow program.

Two transformers share one structure: image patches are embedded, pooled, and
self-attended into a compact image memory; task-side tokens (one parameter
token for the probe-level model, K probe tokens for the search-level model)
read from that memory through cross-attention blocks. The probe-level model
predicts the vertical (descent + depart) profile, duration, and contact depth
of a single probe; the search-level model predicts per-probe conditional
hole-found probabilities which aggregate exactly into the overall success
probability and a smooth expected trajectory length.

All forward paths are differentiable from the outputs back to the task
parameters (point_to, pattern) and the weights.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import planner as pl
from .autodiff import Tensor
from .core import Pose, TaskParams, Trajectory
from .planner import SearchPlan
from .simenv import EnvImage, _segment_samples

CHECKPOINT_MAGIC = b"MUTTCKPT1"
CHECKPOINT_VERSION = 1

N_CONTEXT_FEATURES = 6   # probe xy, point_to xy, v_descent, f_contact
N_TOKEN_FEATURES = 8     # probe xy, point_to xy, log-duration, depth, min z, peak fz


class CheckpointError(IOError):
    """Checkpoint file is corrupt, truncated, or from an unknown version."""


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor; sizes are configuration, not constants."""

    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    patch: int = 4
    image_size: int = 32
    pool: int = 2        # token-grid pooling factor before the encoder
    d_ff: int = 128
    profile_len: int = 25
    k_probes: int = 20

    def __post_init__(self):
        if self.image_size % self.patch != 0:
            raise ValueError("image_size must be divisible by patch")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if (self.image_size // self.patch) % self.pool != 0:
            raise ValueError("token grid must be divisible by pool")

    @property
    def token_grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_patches(self) -> int:
        return self.token_grid ** 2

    @property
    def n_memory(self) -> int:
        return (self.token_grid // self.pool) ** 2

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class NormStats:
    """Per-channel (mean, scale) dataset statistics stored in the checkpoint.

    The time channel is log-space: normalized duration = (log t - m) / s.
    """

    xy: tuple[float, float]
    z: tuple[float, float]
    force: tuple[float, float]
    logdur: tuple[float, float]
    depth: tuple[float, float]
    speed: tuple[float, float]
    fstop: tuple[float, float]
    sample_dt: float
    home: tuple[float, float, float] = (0.0, 0.0, 20.0)

    def __post_init__(self):
        for name in ("xy", "z", "force", "logdur", "depth", "speed", "fstop"):
            m, s = getattr(self, name)
            if s <= 0:
                raise ValueError(f"normalization scale for {name!r} must be positive")
        if self.sample_dt <= 0:
            raise ValueError("sample_dt must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class ModelWeights:
    """omega = (omega1, omega2) plus the architecture and normalization block."""

    arch: ModelArch
    stats: NormStats
    omega1: dict[str, np.ndarray]
    omega2: dict[str, np.ndarray]

    @property
    def has_search_model(self) -> bool:
        return bool(self.omega2)


# -- initialization -------------------------------------------------------------

def _encoder_shapes(arch: ModelArch) -> dict[str, tuple]:
    d, ff = arch.d_model, arch.d_ff
    shapes: dict[str, tuple] = {
        "patch_w": (arch.patch * arch.patch, d), "patch_b": (d,),
        "pos_embed": (arch.n_patches, d),
    }
    for i in range(arch.n_layers):
        p = f"enc{i}_"
        shapes.update({p + "ln1_g": (d,), p + "ln1_b": (d,),
                       p + "wq": (d, d), p + "bq": (d,), p + "wk": (d, d), p + "bk": (d,),
                       p + "wv": (d, d), p + "bv": (d,), p + "wo": (d, d), p + "bo": (d,),
                       p + "ln2_g": (d,), p + "ln2_b": (d,),
                       p + "w1": (d, ff), p + "b1": (ff,), p + "w2": (ff, d), p + "b2": (d,)})
    return shapes


def _cross_block_shapes(prefix: str, arch: ModelArch) -> dict[str, tuple]:
    d, ff = arch.d_model, arch.d_ff
    return {prefix + "lnq_g": (d,), prefix + "lnq_b": (d,),
            prefix + "lnm_g": (d,), prefix + "lnm_b": (d,),
            prefix + "wq": (d, d), prefix + "bq": (d,),
            prefix + "wk": (d, d), prefix + "bk": (d,),
            prefix + "wv": (d, d), prefix + "bv": (d,),
            prefix + "wo": (d, d), prefix + "bo": (d,),
            prefix + "ln2_g": (d,), prefix + "ln2_b": (d,),
            prefix + "w1": (d, ff), prefix + "b1": (ff,),
            prefix + "w2": (ff, d), prefix + "b2": (d,)}


def probe_weight_shapes(arch: ModelArch) -> dict[str, tuple]:
    d = arch.d_model
    shapes = _encoder_shapes(arch)
    shapes.update({"ctx_w": (N_CONTEXT_FEATURES, d), "ctx_b": (d,)})
    for i in range(arch.n_layers):
        shapes.update(_cross_block_shapes(f"dec{i}_", arch))
    shapes.update({"head_profile_w": (d, 2 * arch.profile_len), "head_profile_b": (2 * arch.profile_len,),
                   "head_dur_w": (d, 1), "head_dur_b": (1,),
                   "head_depth_w": (d, 1), "head_depth_b": (1,)})
    return shapes


def search_weight_shapes(arch: ModelArch) -> dict[str, tuple]:
    d = arch.d_model
    shapes = _encoder_shapes(arch)
    shapes.update({"tok_w": (N_TOKEN_FEATURES, d), "tok_b": (d,),
                   "probe_pos_embed": (arch.k_probes, d)})
    for i in range(arch.n_layers):
        p = f"sdec{i}_"
        shapes.update({p + "ln1_g": (d,), p + "ln1_b": (d,),
                       p + "swq": (d, d), p + "sbq": (d,), p + "swk": (d, d), p + "sbk": (d,),
                       p + "swv": (d, d), p + "sbv": (d,), p + "swo": (d, d), p + "sbo": (d,)})
        shapes.update(_cross_block_shapes(p, arch))
    shapes.update({"head_logit_w": (d, 1), "head_logit_b": (1,)})
    return shapes


_ZERO_INIT = ("head_profile", "head_dur", "head_depth", "head_logit")


def _init_from_shapes(shapes: dict[str, tuple], rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(("_g",)):
            out[name] = np.ones(shape)
        elif name.startswith(_ZERO_INIT) or name.endswith(("_b",)):
            out[name] = np.zeros(shape)
        else:
            out[name] = rng.normal(0.0, 0.02, size=shape)
    return out


def init_probe_weights(arch: ModelArch, seed) -> dict[str, np.ndarray]:
    return _init_from_shapes(probe_weight_shapes(arch), np.random.default_rng(seed))


def init_search_weights(arch: ModelArch, seed) -> dict[str, np.ndarray]:
    return _init_from_shapes(search_weight_shapes(arch), np.random.default_rng(seed))


def lift_weights(arrays: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}


# -- normalization helpers --------------------------------------------------------

def norm_value(x, channel: tuple[float, float]):
    m, s = channel
    return (np.asarray(x, dtype=np.float64) - m) / s


def norm_tensor(t: Tensor, channel: tuple[float, float]) -> Tensor:
    m, s = channel
    return (t - m) * (1.0 / s)


# -- image side --------------------------------------------------------------------

def patch_grid(pixels: np.ndarray, arch: ModelArch) -> np.ndarray:
    """(n_patches, patch^2) row-major patch matrix, intensities centered to [-1, 1]."""
    n, p = arch.image_size, arch.patch
    if pixels.shape != (n, n):
        raise ad.ShapeError(f"expected {n}x{n} image, got {pixels.shape}")
    g = arch.token_grid
    x = pixels.reshape(g, p, g, p).transpose(0, 2, 1, 3).reshape(g * g, p * p)
    return (x - 0.5) * 2.0


def encode_image(weights: ModelWeights, image: EnvImage, stage: str = "probe") -> Tensor:
    """Patch embedding plus learned positional embeddings: (n_patches, d_model)."""
    wt = lift_weights(weights.omega1 if stage == "probe" else weights.omega2)
    return _embed_patches(wt, patch_grid(np.asarray(image.pixels), weights.arch)[None], weights.arch)[0]


def _embed_patches(wt: dict[str, Tensor], patches: np.ndarray, arch: ModelArch) -> Tensor:
    b, n = patches.shape[0], patches.shape[1]
    x = ad.affine(Tensor(patches), wt["patch_w"], wt["patch_b"])          # (B, N, d)
    idx = np.broadcast_to(np.arange(n), (b, n))
    return x + ad.embed_lookup(wt["pos_embed"], idx)


def _pool_tokens(x: Tensor, arch: ModelArch) -> Tensor:
    if arch.pool == 1:
        return x
    b = x.data.shape[0]
    g, q = arch.token_grid, arch.pool
    d = arch.d_model
    x = ad.reshape(x, (b, g // q, q, g // q, q, d))
    x = x.mean(axis=(2, 4))
    return ad.reshape(x, (b, (g // q) ** 2, d))


def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    b, n, d = t.data.shape
    return ad.transpose(ad.reshape(t, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    b, h, n, hd = t.data.shape
    return ad.reshape(ad.transpose(t, (0, 2, 1, 3)), (b, n, h * hd))


def _attention(q: Tensor, k: Tensor, v: Tensor, head_dim: int, mask=None) -> Tensor:
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(head_dim))
    if mask is not None:
        scores = ad.where(mask, scores, ad.lift(-1e30))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def _self_attention(wt, prefix: str, x: Tensor, arch: ModelArch, mask=None,
                    names=("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")) -> Tensor:
    wq, bq, wk, bk, wv, bv, wo, bo = (wt[prefix + n] for n in names)
    q = _split_heads(ad.affine(x, wq, bq), arch.n_heads)
    k = _split_heads(ad.affine(x, wk, bk), arch.n_heads)
    v = _split_heads(ad.affine(x, wv, bv), arch.n_heads)
    ctx = _merge_heads(_attention(q, k, v, arch.head_dim, mask))
    return ad.affine(ctx, wo, bo)


def _mlp(wt, prefix: str, x: Tensor) -> Tensor:
    return ad.affine(ad.relu(ad.affine(x, wt[prefix + "w1"], wt[prefix + "b1"])),
                     wt[prefix + "w2"], wt[prefix + "b2"])


def image_memory(wt: dict[str, Tensor], pixels: np.ndarray, arch: ModelArch) -> Tensor:
    """Embed, pool, and self-attend a batch of images: (B, n_memory, d_model)."""
    if pixels.ndim == 2:
        pixels = pixels[None]
    patches = np.stack([patch_grid(p, arch) for p in pixels])
    x = _pool_tokens(_embed_patches(wt, patches, arch), arch)
    for i in range(arch.n_layers):
        p = f"enc{i}_"
        y = ad.layer_norm(x, wt[p + "ln1_g"], wt[p + "ln1_b"])
        x = x + _self_attention(wt, p, y, arch)
        x = x + _mlp(wt, p, ad.layer_norm(x, wt[p + "ln2_g"], wt[p + "ln2_b"]))
    return x


def _cross_attention(wt, prefix: str, q_tokens: Tensor, memory: Tensor,
                     arch: ModelArch, mem_idx=None) -> Tensor:
    """q_tokens (B', T, d) read from memory (B, M, d); ``mem_idx`` maps B' -> B."""
    y = ad.layer_norm(q_tokens, wt[prefix + "lnq_g"], wt[prefix + "lnq_b"])
    mem = ad.layer_norm(memory, wt[prefix + "lnm_g"], wt[prefix + "lnm_b"])
    q = _split_heads(ad.affine(y, wt[prefix + "wq"], wt[prefix + "bq"]), arch.n_heads)
    k = _split_heads(ad.affine(mem, wt[prefix + "wk"], wt[prefix + "bk"]), arch.n_heads)
    v = _split_heads(ad.affine(mem, wt[prefix + "wv"], wt[prefix + "bv"]), arch.n_heads)
    if mem_idx is not None:
        k = ad.embed_lookup(k, mem_idx)
        v = ad.embed_lookup(v, mem_idx)
    ctx = _merge_heads(_attention(q, k, v, arch.head_dim))
    return ad.affine(ctx, wt[prefix + "wo"], wt[prefix + "bo"])


# -- probe-level model ---------------------------------------------------------------

@dataclass
class ProbeBatch:
    """Batched probe-level predictions; all fields are tensors."""

    profile_z: Tensor    # (N, L) mm
    profile_fz: Tensor   # (N, L) N
    duration: Tensor     # (N,) s, strictly positive
    contact_depth: Tensor  # (N,) mm
    raw: Tensor          # (N, 2L + 2) normalized head outputs, training targets' space

    def __len__(self):
        return self.duration.data.shape[0]


@dataclass
class ProbePrediction:
    """Vertical-phase prediction for a single probe."""

    profile_z: Tensor
    profile_fz: Tensor
    duration: Tensor
    contact_depth: Tensor

    @property
    def profile(self) -> np.ndarray:
        return np.column_stack([self.profile_z.data, self.profile_fz.data])


def probe_readout(wt: dict[str, Tensor], memory: Tensor, contexts: Tensor,
                  mem_idx: np.ndarray, arch: ModelArch, stats: NormStats) -> ProbeBatch:
    """Run N probe parameter tokens against the image memory.

    ``contexts`` is (N, 6) of normalized features; ``mem_idx`` maps each probe
    to its image row in ``memory``.
    """
    if contexts.data.ndim != 2 or contexts.data.shape[1] != N_CONTEXT_FEATURES:
        raise ad.ShapeError(f"contexts must be (N, {N_CONTEXT_FEATURES}), got {contexts.data.shape}")
    n = contexts.data.shape[0]
    q = ad.affine(contexts, wt["ctx_w"], wt["ctx_b"])
    q3 = ad.reshape(q, (n, 1, arch.d_model))
    for i in range(arch.n_layers):
        p = f"dec{i}_"
        q3 = q3 + _cross_attention(wt, p, q3, memory, arch, mem_idx=mem_idx)
        q3 = q3 + _mlp(wt, p, ad.layer_norm(q3, wt[p + "ln2_g"], wt[p + "ln2_b"]))
    h = ad.reshape(q3, (n, arch.d_model))

    raw_profile = ad.affine(h, wt["head_profile_w"], wt["head_profile_b"])   # (N, 2L)
    raw_dur = ad.affine(h, wt["head_dur_w"], wt["head_dur_b"])               # (N, 1)
    raw_depth = ad.affine(h, wt["head_depth_w"], wt["head_depth_b"])         # (N, 1)
    lm, ls = stats.logdur
    zm, zs = stats.z
    fm, fs = stats.force
    dm, ds = stats.depth
    L = arch.profile_len
    profile_z = raw_profile[:, :L] * zs + zm
    profile_fz = raw_profile[:, L:] * fs + fm
    duration = ad.exp(ad.reshape(raw_dur, (n,)) * ls + lm)
    depth = ad.reshape(raw_depth, (n,)) * ds + dm
    raw = ad.concat([raw_profile, raw_dur, raw_depth], axis=1)
    return ProbeBatch(profile_z=profile_z, profile_fz=profile_fz,
                      duration=duration, contact_depth=depth, raw=raw)


def probe_context_matrix(positions: Tensor, point_to_xy: Tensor, v_descent: float,
                         f_contact: float, stats: NormStats) -> Tensor:
    """(K, 6) normalized context rows for a batch of probes of one program."""
    k = positions.data.shape[0]
    ones = Tensor(np.ones((k, 1)))
    pos_n = norm_tensor(positions, stats.xy)
    pt_n = ad.matmul(ones, ad.reshape(norm_tensor(point_to_xy, stats.xy), (1, 2)))
    v_n = ones * float(norm_value(v_descent, stats.speed))
    f_n = ones * float(norm_value(f_contact, stats.fstop))
    return ad.concat([pos_n, pt_n, v_n, f_n], axis=1)


def probe_forward(weights: ModelWeights, image_tokens: Tensor, probe_context) -> ProbePrediction:
    """Single-probe inference; ``probe_context`` = (probe_xy, point_to, v_descent, f_contact)."""
    arch, stats = weights.arch, weights.stats
    wt = lift_weights(weights.omega1)
    probe_xy, point_to, v_descent, f_contact = probe_context
    if isinstance(point_to, Pose):
        point_to = (point_to.x, point_to.y)
    pos = probe_xy if isinstance(probe_xy, Tensor) else Tensor(np.asarray(probe_xy, float))
    pt = point_to if isinstance(point_to, Tensor) else Tensor(np.asarray(point_to, float)[:2])
    if not (np.all(np.isfinite(pos.data)) and np.all(np.isfinite(pt.data))):
        raise ad.NumericError("non-finite probe context")
    memory = _encode_from_tokens(wt, image_tokens, arch)
    ctx = probe_context_matrix(ad.reshape(pos, (1, 2)), pt[:2], v_descent, f_contact, stats)
    batch = probe_readout(wt, memory, ctx, np.zeros(1, dtype=int), arch, stats)
    return ProbePrediction(profile_z=batch.profile_z[0, :], profile_fz=batch.profile_fz[0, :],
                           duration=batch.duration[0], contact_depth=batch.contact_depth[0])


def _encode_from_tokens(wt: dict[str, Tensor], image_tokens: Tensor, arch: ModelArch) -> Tensor:
    """Pool embedded patch tokens and run the encoder layers; returns (1, M, d)."""
    x = _pool_tokens(ad.reshape(image_tokens, (1,) + image_tokens.data.shape), arch)
    for i in range(arch.n_layers):
        p = f"enc{i}_"
        y = ad.layer_norm(x, wt[p + "ln1_g"], wt[p + "ln1_b"])
        x = x + _self_attention(wt, p, y, arch)
        x = x + _mlp(wt, p, ad.layer_norm(x, wt[p + "ln2_g"], wt[p + "ln2_b"]))
    return x


# -- search-level model -----------------------------------------------------------

@dataclass
class SearchPrediction:
    """Search-level outputs; probabilities and lengths are differentiable."""

    p_probe: Tensor          # (K,) conditional hole-found probabilities
    p_success: Tensor        # scalar, exactly 1 - prod(1 - p_probe)
    expected_length: Tensor  # scalar, points
    q_terminal: Tensor       # (K,) probability the search ends at probe k
    q_fail: Tensor           # scalar, probability all probes miss
    plan: SearchPlan
    probes: ProbeBatch
    trajectory: Trajectory | None = None


def probe_token_matrix(positions: Tensor, point_to_xy: Tensor, probes: ProbeBatch,
                       stats: NormStats) -> Tensor:
    """(K, 8) normalized probe-token features from positions and probe predictions."""
    k = positions.data.shape[0]
    ones = Tensor(np.ones((k, 1)))
    pos_n = norm_tensor(positions, stats.xy)
    pt_n = ad.matmul(ones, ad.reshape(norm_tensor(point_to_xy, stats.xy), (1, 2)))
    logdur_n = norm_tensor(ad.log(probes.duration), stats.logdur)
    depth_n = norm_tensor(probes.contact_depth, stats.depth)
    zmin_n = norm_tensor(-((-probes.profile_z).max(axis=1)), stats.z)
    fzmax_n = norm_tensor(probes.profile_fz.max(axis=1), stats.force)
    cols = [pos_n, pt_n] + [ad.reshape(c, (k, 1)) for c in (logdur_n, depth_n, zmin_n, fzmax_n)]
    return ad.concat(cols, axis=1)


def search_decode(wt: dict[str, Tensor], memory: Tensor, tokens: Tensor,
                  arch: ModelArch) -> Tensor:
    """Causal decoder over (B, K, 8) probe tokens; returns logits (B, K)."""
    b, k, _ = tokens.data.shape
    x = ad.affine(tokens, wt["tok_w"], wt["tok_b"])
    x = x + ad.embed_lookup(wt["probe_pos_embed"], np.broadcast_to(np.arange(k), (b, k)))
    causal = np.tril(np.ones((k, k), dtype=bool))
    for i in range(arch.n_layers):
        p = f"sdec{i}_"
        y = ad.layer_norm(x, wt[p + "ln1_g"], wt[p + "ln1_b"])
        x = x + _self_attention(wt, p, y, arch, mask=causal,
                                names=("swq", "sbq", "swk", "sbk", "swv", "sbv", "swo", "sbo"))
        x = x + _cross_attention(wt, p, x, memory, arch)
        x = x + _mlp(wt, p, ad.layer_norm(x, wt[p + "ln2_g"], wt[p + "ln2_b"]))
    return ad.reshape(ad.affine(x, wt["head_logit_w"], wt["head_logit_b"]), (b, k))


def survival_chain(p: Tensor):
    """(q_terminal (K,), q_fail, p_success) from conditional probabilities (K,).

    q_k = p_k * prod_{j<k}(1 - p_j); q_fail = prod_k(1 - p_k);
    p_success = 1 - q_fail on the same arithmetic path.
    """
    k = p.data.shape[0]
    surv = ad.lift(1.0)
    qs = []
    for i in range(k):
        pi = p[i]
        qs.append(ad.reshape(pi * surv, (1,)))
        surv = surv * (1.0 - pi)
    q = ad.concat(qs, axis=0)
    p_success = 1.0 - surv
    return q, surv, p_success


def expected_length_points(q: Tensor, q_fail: Tensor, len_k: Tensor) -> Tensor:
    """sum_k q_k * len_k + q_fail * len_K."""
    k = len_k.data.shape[0]
    return (q * len_k).sum() + q_fail * len_k[k - 1]


def cumulative_lengths(plan: SearchPlan, durations: Tensor, sample_dt: float) -> Tensor:
    """len_k: predicted points through probe k = elapsed predicted time / dt."""
    k = durations.data.shape[0]
    cycle = plan.lateral_durations + durations
    cum = ad.reshape(ad.matmul(Tensor(np.tril(np.ones((k, k)))), ad.reshape(cycle, (k, 1))), (k,))
    return (cum + plan.approach_duration) * (1.0 / sample_dt)


def search_forward(weights: ModelWeights, image_tokens: Tensor, params: TaskParams,
                   probe_preds: list[ProbePrediction] | ProbeBatch,
                   plan: SearchPlan | None = None) -> SearchPrediction:
    """Search-level inference from probe predictions (one per pattern entry)."""
    arch, stats = weights.arch, weights.stats
    if not weights.has_search_model:
        raise ValueError("search model weights are empty; train the search stage first")
    probes = _as_probe_batch(probe_preds, arch)
    if len(probes) != params.k:
        raise ad.ShapeError(f"{len(probes)} probe predictions for {params.k} pattern entries")
    wt = lift_weights(weights.omega2)
    memory = _encode_from_tokens(wt, image_tokens, arch)
    if plan is None:
        plan = pl.compose_search_plan(params, home=Pose(*stats.home))
    pt_xy = Tensor(np.array([params.point_to.x, params.point_to.y]))
    tokens = probe_token_matrix(plan.probe_positions, pt_xy, probes, stats)
    logits = search_decode(wt, memory, ad.reshape(tokens, (1, params.k, N_TOKEN_FEATURES)), arch)
    return finish_search_prediction(logits[0, :], plan, probes, stats)


def finish_search_prediction(logits: Tensor, plan: SearchPlan, probes: ProbeBatch,
                             stats: NormStats) -> SearchPrediction:
    p = ad.sigmoid(logits)
    q, q_fail, p_success = survival_chain(p)
    len_k = cumulative_lengths(plan, probes.duration, stats.sample_dt)
    e_len = expected_length_points(q, q_fail, len_k)
    return SearchPrediction(p_probe=p, p_success=p_success, expected_length=e_len,
                            q_terminal=q, q_fail=q_fail, plan=plan, probes=probes)


def _as_probe_batch(preds, arch: ModelArch) -> ProbeBatch:
    if isinstance(preds, ProbeBatch):
        return preds
    z = ad.concat([ad.reshape(p.profile_z, (1, arch.profile_len)) for p in preds], axis=0)
    fz = ad.concat([ad.reshape(p.profile_fz, (1, arch.profile_len)) for p in preds], axis=0)
    dur = ad.concat([ad.reshape(p.duration, (1,)) for p in preds], axis=0)
    depth = ad.concat([ad.reshape(p.contact_depth, (1,)) for p in preds], axis=0)
    raw = Tensor(np.zeros((len(preds), 2 * arch.profile_len + 2)))
    return ProbeBatch(profile_z=z, profile_fz=fz, duration=dur, contact_depth=depth, raw=raw)


# -- shadow program ------------------------------------------------------------------

def shadow_forward(weights: ModelWeights, params: TaskParams, image: EnvImage,
                   point_to: Tensor | None = None, pattern: Tensor | None = None,
                   assemble: bool = False,
                   memories: tuple[Tensor, Tensor] | None = None) -> SearchPrediction:
    """Full differentiable forward pass: (x, I) -> predicted search outcome.

    Tensors passed as ``point_to`` / ``pattern`` override the values in
    ``params`` and receive gradients; ``memories`` short-circuits the two
    image encoders (used when weights are frozen and the image is fixed).
    ``assemble=True`` additionally builds the predicted trajectory, truncated
    at the most likely terminating probe (reporting only).
    """
    arch, stats = weights.arch, weights.stats
    if not weights.has_search_model:
        raise ValueError("shadow_forward needs both model stages")
    w1 = lift_weights(weights.omega1)
    w2 = lift_weights(weights.omega2)
    if memories is None:
        pixels = np.asarray(image.pixels)
        mem1 = image_memory(w1, pixels, arch)
        mem2 = image_memory(w2, pixels, arch)
    else:
        mem1, mem2 = memories

    plan = pl.compose_search_plan(params, point_to=point_to, pattern=pattern,
                                  home=Pose(*stats.home))
    pt_xy = (point_to[:2] if point_to is not None
             else Tensor(np.array([params.point_to.x, params.point_to.y])))
    contexts = probe_context_matrix(plan.probe_positions, pt_xy,
                                    params.v_descent, params.f_contact, stats)
    probes = probe_readout(w1, mem1, contexts, np.zeros(params.k, dtype=int), arch, stats)
    tokens = probe_token_matrix(plan.probe_positions, pt_xy, probes, stats)
    logits = search_decode(w2, mem2, ad.reshape(tokens, (1, params.k, N_TOKEN_FEATURES)), arch)
    pred = finish_search_prediction(logits[0, :], plan, probes, stats)
    if assemble:
        pred.trajectory = assemble_trajectory(params, pred, stats)
    return pred


def precompute_memories(weights: ModelWeights, image: EnvImage) -> tuple[Tensor, Tensor]:
    """Encode the image once for both stages (constant during optimization)."""
    pixels = np.asarray(image.pixels)
    mem1 = image_memory(lift_weights(weights.omega1), pixels, weights.arch)
    mem2 = image_memory(lift_weights(weights.omega2), pixels, weights.arch)
    return Tensor(mem1.data), Tensor(mem2.data)


def assemble_trajectory(params: TaskParams, pred: SearchPrediction, stats: NormStats) -> Trajectory:
    """Concatenate planner laterals with predicted vertical profiles, truncated
    at the most likely terminating probe. Values only (no gradients)."""
    dt = stats.sample_dt
    home = np.array(stats.home, dtype=np.float64)
    q = pred.q_terminal.data
    q_fail = float(pred.q_fail.data)
    outcomes = np.concatenate([q, [q_fail]])
    k_star = int(np.argmax(outcomes))
    n_exec = params.k if k_star == params.k else k_star + 1

    times = [np.array([0.0])]
    poses = [home[None, :]]
    pt = params.point_to.as_array()
    seg_t, seg_p = _segment_samples(home, pt, params.v_lateral, params.accel, dt)
    fz = [np.zeros(1), np.zeros(seg_t.size)]
    times.append(seg_t)
    poses.append(seg_p)
    cursor_t = seg_t[-1] if seg_t.size else 0.0
    cursor_p = pt.copy()
    n_samples = 1 + seg_t.size
    bounds = []
    positions = pred.plan.probe_positions.data
    for k in range(n_exec):
        start_idx = n_samples
        top = np.array([positions[k, 0], positions[k, 1], params.depart_height])
        lt, lp = _segment_samples(cursor_p, top, params.v_lateral, params.accel, dt)
        if lt.size:
            times.append(cursor_t + lt)
            poses.append(lp)
            fz.append(np.zeros(lt.size))
            cursor_t += lt[-1]
            n_samples += lt.size
        dur = float(pred.probes.duration.data[k])
        n_v = max(1, int(round(dur / dt)))
        local = np.arange(1, n_v + 1) * (dur / n_v)
        node_t = np.linspace(0.0, dur, pred.probes.profile_z.data.shape[1])
        z = np.interp(local, node_t, pred.probes.profile_z.data[k])
        f = np.interp(local, node_t, pred.probes.profile_fz.data[k])
        times.append(cursor_t + local)
        poses.append(np.column_stack([np.full(n_v, top[0]), np.full(n_v, top[1]), z]))
        fz.append(f)
        cursor_t += local[-1]
        cursor_p = np.array([top[0], top[1], z[-1]])
        n_samples += n_v
        bounds.append((start_idx, n_samples))
    t = np.concatenate(times)
    pos = np.concatenate(poses)
    force = np.concatenate(fz)
    return Trajectory(t, pos, force, bool(pred.p_success.data >= 0.5), bounds)


# -- checkpoint io ----------------------------------------------------------------

def save_checkpoint(weights: ModelWeights, path) -> None:
    """Binary container: magic, json header (arch, stats, manifests), raw f64."""
    manifests = {}
    blobs = []
    for group in ("omega1", "omega2"):
        arrays = getattr(weights, group)
        manifest = []
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype=np.float64)
            manifest.append([name, list(a.shape)])
            blobs.append(a.astype("<f8").tobytes())
        manifests[group] = manifest
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "arch": dataclasses.asdict(weights.arch),
        "stats": weights.stats.to_dict(),
        "manifests": manifests,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> ModelWeights:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic; not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", blob[off:off + 4])
    off += 4
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    off += hlen
    arch = ModelArch(**header["arch"])
    stats = NormStats.from_dict(header["stats"])
    groups = {}
    for group in ("omega1", "omega2"):
        arrays = {}
        for name, shape in header["manifests"][group]:
            n = int(np.prod(shape)) if shape else 1
            raw = blob[off:off + 8 * n]
            if len(raw) != 8 * n:
                raise CheckpointError("truncated checkpoint")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            off += 8 * n
        groups[group] = arrays
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    weights = ModelWeights(arch=arch, stats=stats, omega1=groups["omega1"], omega2=groups["omega2"])
    _validate_shapes(weights)
    return weights


def _validate_shapes(weights: ModelWeights) -> None:
    expected = probe_weight_shapes(weights.arch)
    got = {k: v.shape for k, v in weights.omega1.items()}
    if got != {k: tuple(v) for k, v in expected.items()}:
        raise CheckpointError("probe-model arrays do not match the architecture descriptor")
    if weights.omega2:
        expected2 = search_weight_shapes(weights.arch)
        got2 = {k: v.shape for k, v in weights.omega2.items()}
        if got2 != {k: tuple(v) for k, v in expected2.items()}:
            raise CheckpointError("search-model arrays do not match the architecture descriptor")
