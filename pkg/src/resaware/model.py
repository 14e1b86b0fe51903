"""The resolution-aware detector.

Shared three-block conv encoder over each log-mel resolution, optional
per-dataset scale/shift modulation of the embeddings, cross-scale multi-head
self-attention over the stacked resolution embeddings, mean fusion, and
per-dataset linear heads. Includes the consistency regularizer, the training
loop, parameter/FLOP accounting, Grad-CAM, and the ablation variants.
"""

from __future__ import annotations

import ctypes
import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .dsp import CANONICAL_CONFIGS, MelSpectrogram
from .errors import ConfigError, DataError
from .nn import (Adam, Parameter, Tensor, adaptive_avg_pool_1x1, bce_with_logits,
                 conv2d, l2_normalize, load_checkpoint, max_pool_2x2, no_grad,
                 relu, save_checkpoint, sigmoid, softmax)
from .nn.autograd import getitem, matmul, mul, reshape, stack as t_stack, \
    transpose, tsum

VARIANTS = ("full", "no-consistency", "single-res", "no-attention")


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (32, 64, 128)
    embed_dim: int = 128
    resolutions: int = 3
    heads: int = 4
    num_datasets: int = 3
    lambda_cons: float = 1.0
    variant: str = "full"
    single_resolution: int = 2  # k in {1,2,3}; medium by default

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.variant != "single-res" and self.resolutions != 3:
            raise ConfigError("multi-resolution variants require K = 3")
        if not (1 <= self.single_resolution <= 3):
            raise ConfigError("single_resolution must be 1, 2 or 3")
        if self.num_datasets < 1:
            raise ConfigError("need at least one dataset head")

    @property
    def active_resolutions(self) -> tuple:
        if self.variant == "single-res":
            return (self.single_resolution,)
        return (1, 2, 3)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels), "embed_dim": self.embed_dim,
            "resolutions": self.resolutions, "heads": self.heads,
            "num_datasets": self.num_datasets, "lambda_cons": self.lambda_cons,
            "variant": self.variant, "single_resolution": self.single_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(channels=tuple(d["channels"]), embed_dim=d["embed_dim"],
                   resolutions=d["resolutions"], heads=d["heads"],
                   num_datasets=d["num_datasets"], lambda_cons=d["lambda_cons"],
                   variant=d["variant"], single_resolution=d["single_resolution"])


class ModelParams:
    """Named parameter set; iteration order is fixed for Adam determinism."""

    def __init__(self, tensors: dict[str, Parameter]):
        self.tensors = tensors

    def __getitem__(self, name) -> Parameter:
        return self.tensors[name]

    def parameters(self) -> list[Parameter]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.tensors.items():
            if p.data.shape != arrays[k].shape:
                raise ConfigError(f"parameter {k}: shape mismatch")
            p.data = arrays[k].copy()

    def zero_grad(self):
        for p in self.tensors.values():
            p.zero_grad()


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Kaiming-uniform conv/linear weights, uniform(+-1/sqrt(d)) attention
    projections, identity modulation (gamma=1, beta=0), zero biases."""
    rng = np.random.default_rng(seed)
    d = cfg.embed_dim
    c1, c2, c3 = cfg.channels

    def kaiming(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t = {}
    t["conv1.w"] = Parameter(kaiming((c1, 1, 3, 3), 9), "conv1.w")
    t["conv1.b"] = Parameter(np.zeros(c1), "conv1.b")
    t["conv2.w"] = Parameter(kaiming((c2, c1, 3, 3), c1 * 9), "conv2.w")
    t["conv2.b"] = Parameter(np.zeros(c2), "conv2.b")
    t["conv3.w"] = Parameter(kaiming((c3, c2, 3, 3), c2 * 9), "conv3.w")
    t["conv3.b"] = Parameter(np.zeros(c3), "conv3.b")
    t["mod.gamma"] = Parameter(np.ones((cfg.num_datasets, d)), "mod.gamma")
    t["mod.beta"] = Parameter(np.zeros((cfg.num_datasets, d)), "mod.beta")
    bound = 1.0 / math.sqrt(d)
    t["attn.w_qkv"] = Parameter(rng.uniform(-bound, bound, (3 * d, d)), "attn.w_qkv")
    t["attn.b_qkv"] = Parameter(np.zeros(3 * d), "attn.b_qkv")
    t["attn.w_o"] = Parameter(rng.uniform(-bound, bound, (d, d)), "attn.w_o")
    t["attn.b_o"] = Parameter(np.zeros(d), "attn.b_o")
    t["head.w"] = Parameter(kaiming((cfg.num_datasets, d), d), "head.w")
    t["head.b"] = Parameter(np.zeros(cfg.num_datasets), "head.b")
    return ModelParams(t)


@dataclass
class ForwardTrace:
    embeddings: Tensor          # [N, K_active, d] post-modulation, pre-attention
    attended: Tensor | None     # [N, K, d] after cross-scale attention
    fused: Tensor               # [N, d]
    logits: Tensor              # [N]
    attn_weights: np.ndarray | None  # [N, heads, K, K]
    conv3_acts: dict            # resolution index -> Tensor [N, C3, H, W]
    active_resolutions: tuple


def encode(x: Tensor | np.ndarray, params: ModelParams, cfg: ModelConfig,
           dataset_ids) -> tuple[Tensor, Tensor]:
    """Shared encoder over one resolution batch [N,1,H,W].

    Returns (modulated embeddings [N,d], retained conv3 activations).
    """
    h = relu(conv2d(x, params["conv1.w"], params["conv1.b"]))
    h = max_pool_2x2(h)
    h = relu(conv2d(h, params["conv2.w"], params["conv2.b"]))
    h = max_pool_2x2(h)
    acts = relu(conv2d(h, params["conv3.w"], params["conv3.b"]))
    h = max_pool_2x2(acts)
    z = adaptive_avg_pool_1x1(h)  # [N, d]
    if cfg.num_datasets > 1:
        ids = _check_ids(dataset_ids, cfg, z.shape[0])
        gamma = getitem(params["mod.gamma"], ids)
        beta = getitem(params["mod.beta"], ids)
        z = mul(z, gamma) + beta
    return z, acts


def _check_ids(dataset_ids, cfg: ModelConfig, n: int) -> np.ndarray:
    ids = np.broadcast_to(np.asarray(dataset_ids, dtype=np.int64), (n,)).copy()
    if ids.min() < 0 or ids.max() >= cfg.num_datasets:
        raise ConfigError(
            f"dataset id out of range 0..{cfg.num_datasets - 1}: {ids.min()}..{ids.max()}")
    return ids


def cross_scale_attention(z: Tensor, params: ModelParams, cfg: ModelConfig):
    """Multi-head self-attention over the K resolution tokens of each sample.

    z: [N, K, d]. Returns (attended [N, K, d], weights [N, heads, K, K]).
    """
    n, k, d = z.shape
    nh, dh = cfg.heads, d // cfg.heads
    qkv = matmul(z, transpose(params["attn.w_qkv"], (1, 0))) + params["attn.b_qkv"]
    q = getitem(qkv, (slice(None), slice(None), slice(0, d)))
    kk = getitem(qkv, (slice(None), slice(None), slice(d, 2 * d)))
    v = getitem(qkv, (slice(None), slice(None), slice(2 * d, 3 * d)))

    def heads(t):  # [N,K,d] -> [N,heads,K,dh]
        return transpose(reshape(t, (n, k, nh, dh)), (0, 2, 1, 3))

    q, kk, v = heads(q), heads(kk), heads(v)
    scores = mul(matmul(q, transpose(kk, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)  # [N,heads,K,K]
    ctx = matmul(attn, v)  # [N,heads,K,dh]
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (n, k, d))
    out = matmul(ctx, transpose(params["attn.w_o"], (1, 0))) + params["attn.b_o"]
    return out, attn.data.copy()


def forward(spec_batches, params: ModelParams, cfg: ModelConfig,
            dataset_ids=0, encode_all: bool = False) -> ForwardTrace:
    """Run the detector on a batch.

    spec_batches: dict {resolution k: array [N,H_k,W_k]} or a list of three
    per-resolution batches ordered fine, medium, coarse. Under single-res only
    the configured resolution is encoded unless encode_all is set (Grad-CAM
    encodes everything so disconnected resolutions yield zero maps).
    """
    batches = _as_batches(spec_batches)
    active = cfg.active_resolutions
    encode_res = (1, 2, 3) if encode_all else active
    n = batches[encode_res[0]].shape[0]
    ids = _check_ids(dataset_ids, cfg, n)

    z_by_res, acts_by_res = {}, {}
    for k in encode_res:
        x = batches[k][:, None, :, :]  # [N,1,H,W]
        z_by_res[k], acts_by_res[k] = encode(Tensor(x), params, cfg, ids)

    z = t_stack([z_by_res[k] for k in active], axis=1)  # [N, K_active, d]

    attended = None
    attn_w = None
    if cfg.variant in ("full", "no-consistency"):
        attended, attn_w = cross_scale_attention(z, params, cfg)
        fused = attended.mean(axis=1)
    elif cfg.variant == "no-attention":
        fused = z.mean(axis=1)
    else:  # single-res
        fused = reshape(z, (n, cfg.embed_dim))

    head_w = getitem(params["head.w"], ids)  # [N, d]
    head_b = getitem(params["head.b"], ids)  # [N]
    logits = tsum(mul(fused, head_w), axis=1) + head_b
    return ForwardTrace(embeddings=z, attended=attended, fused=fused, logits=logits,
                        attn_weights=attn_w, conv3_acts=acts_by_res,
                        active_resolutions=active)


def _as_batches(spec_batches) -> dict:
    if isinstance(spec_batches, dict):
        return {k: np.asarray(v, dtype=np.float64) for k, v in spec_batches.items()}
    out = {}
    for k, v in zip((1, 2, 3), spec_batches):
        if isinstance(v, MelSpectrogram):
            out[k] = v.values[None, :, :]
        else:
            out[k] = np.asarray(v, dtype=np.float64)
    return out


def consistency_loss(embeddings: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over bona fide samples of sum_{i<j} ||zhat_i - zhat_j||^2.

    embeddings: [N, K, d] post-modulation, pre-attention. Returns a scalar
    Tensor; exactly zero (constant) when the batch has no bona fide samples
    or fewer than two resolutions.
    """
    labels = np.asarray(labels)
    n, k, _ = embeddings.shape
    bona = np.flatnonzero(labels == metrics.BONA_FIDE)
    if len(bona) == 0 or k < 2:
        return Tensor(0.0)
    zhat = l2_normalize(embeddings, axis=2)
    total = None
    for i in range(k):
        zi = getitem(zhat, (slice(None), i))
        for j in range(i + 1, k):
            diff = zi - getitem(zhat, (slice(None), j))
            pair = tsum(mul(diff, diff), axis=1)  # [N]
            total = pair if total is None else total + pair
    per_sample = getitem(total, bona)
    return per_sample.mean()


@dataclass
class LossBreakdown:
    total: Tensor
    cls_value: float
    cons_value: float
    lam: float

    @property
    def total_value(self) -> float:
        return self.total.item()


def total_loss(trace: ForwardTrace, labels: np.ndarray, cfg: ModelConfig) -> LossBreakdown:
    """L = mean BCE + lambda * consistency; no-consistency forces lambda = 0."""
    labels = np.asarray(labels, dtype=np.float64)
    cls = bce_with_logits(trace.logits, labels).mean()
    lam = 0.0 if cfg.variant == "no-consistency" else cfg.lambda_cons
    cons = consistency_loss(trace.embeddings, labels)
    total = cls + mul(cons, lam)
    return LossBreakdown(total=total, cls_value=cls.item(),
                         cons_value=cons.item(), lam=lam)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0


@dataclass
class FeatureSet:
    """Pre-extracted features for one split: per-resolution stacked batches."""
    batches: dict          # resolution k -> [N, H_k, W_k]
    labels: np.ndarray     # [N]
    dataset_ids: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return FeatureSet({k: v[idx] for k, v in self.batches.items()},
                          self.labels[idx], self.dataset_ids[idx])


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_cls: float
    loss_cons: float
    val_eer: float


try:
    _libc = ctypes.CDLL("libc.so.6")
except OSError:  # non-glibc platform; trimming is a best-effort optimization
    _libc = None


def _release_free_heap():
    """Hand freed allocator pages back to the kernel.

    Mini-batch training churns through ~GB-sized short-lived activation
    buffers; glibc retains the freed chunks and the resident set ratchets up
    to several times the live data on long multi-run sessions. malloc_trim
    releases whole free pages (madvise) anywhere in the heap.
    """
    if _libc is not None:
        try:
            _libc.malloc_trim(0)
        except (AttributeError, OSError):
            pass


def predict_scores(features: FeatureSet, arrays: dict[str, np.ndarray],
                   cfg: ModelConfig, batch_size: int = 32) -> np.ndarray:
    """Sigmoid spoof scores with no gradient tape (params wrapped as constants)."""
    frozen = ModelParams({k: Tensor(v) for k, v in arrays.items()})
    out = []
    with no_grad():
        for lo in range(0, len(features), batch_size):
            sub = features.subset(np.arange(lo, min(lo + batch_size, len(features))))
            trace = forward(sub.batches, frozen, cfg, sub.dataset_ids)
            out.append(sigmoid(trace.logits).data)
    return np.concatenate(out) if out else np.zeros(0)


def train(train_set: FeatureSet, dev_set: FeatureSet, cfg: ModelConfig,
          run: TrainConfig) -> tuple[dict[str, np.ndarray], list[EpochRecord]]:
    """Seeded mini-batch Adam training with per-epoch validation EER.

    Returns (parameter arrays from the best-EER epoch, history). Ties on the
    validation EER keep the earlier epoch.
    """
    if len(train_set) == 0 or len(dev_set) == 0:
        raise DataError("train and dev splits must be non-empty")
    params = init_params(cfg, seed=run.seed)
    opt = Adam(params.parameters(), lr=run.lr)
    history: list[EpochRecord] = []
    best_arrays = params.copy_arrays()
    best_eer = float("inf")

    for epoch in range(1, run.epochs + 1):
        order = np.arange(len(train_set))
        np.random.default_rng((run.seed, epoch)).shuffle(order)
        sums = np.zeros(3)
        for lo in range(0, len(order), run.batch_size):
            idx = order[lo : lo + run.batch_size]
            sub = train_set.subset(idx)
            trace = forward(sub.batches, params, cfg, sub.dataset_ids)
            loss = total_loss(trace, sub.labels, cfg)
            opt.zero_grad()
            loss.total.backward()
            opt.step()
            sums += len(idx) * np.array([loss.total_value, loss.cls_value,
                                         loss.cons_value])
            del trace, loss
            _release_free_heap()
        means = sums / len(order)
        scores = predict_scores(dev_set, params.copy_arrays(), cfg)
        val_eer, _ = metrics.eer(metrics.ScoreSet(scores, dev_set.labels))
        history.append(EpochRecord(epoch, means[0], means[1], means[2], val_eer))
        if val_eer < best_eer:
            best_eer = val_eer
            best_arrays = params.copy_arrays()
    return best_arrays, history


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------

def count_parameters(cfg: ModelConfig) -> dict:
    """Per-module trainable parameter counts and the total."""
    d = cfg.embed_dim
    c1, c2, c3 = cfg.channels
    rows = {
        "encoder_conv1": c1 * 1 * 9 + c1,
        "encoder_conv2": c2 * c1 * 9 + c2,
        "encoder_conv3": c3 * c2 * 9 + c3,
        "modulation_gamma": cfg.num_datasets * d,
        "modulation_beta": cfg.num_datasets * d,
        "attention_in_projection": 3 * d * d + 3 * d,
        "attention_out_projection": d * d + d,
        "classifier_head_per_dataset": d + 1,
    }
    total = sum(v for k, v in rows.items() if k != "classifier_head_per_dataset")
    total += cfg.num_datasets * rows["classifier_head_per_dataset"]
    return {"rows": rows, "num_datasets": cfg.num_datasets, "total": total}


def canonical_input_shapes(duration_s: float = 2.0) -> dict:
    """Mel-spectrogram shapes for a clip of the given duration at 16 kHz."""
    n = int(round(duration_s * 16000))
    return {k + 1: (cfg.n_mels, 1 + n // cfg.hop)
            for k, cfg in enumerate(CANONICAL_CONFIGS)}


def estimate_flops(cfg: ModelConfig, input_shapes: dict | None = None) -> dict:
    """Analytic forward FLOP count (2 x MACs for conv/linear/attention matmuls)."""
    if input_shapes is None:
        input_shapes = canonical_input_shapes()
    d = cfg.embed_dim
    c1, c2, c3 = cfg.channels
    per_res = {}
    for k in cfg.active_resolutions:
        h, w = input_shapes[k]
        if h == 0 or w == 0:
            per_res[k] = 0.0
            continue
        flops = 2.0 * c1 * 1 * 9 * h * w
        h, w = h // 2, w // 2
        flops += 2.0 * c2 * c1 * 9 * h * w
        h, w = h // 2, w // 2
        flops += 2.0 * c3 * c2 * 9 * h * w
        h, w = h // 2, w // 2
        flops += c3 * h * w          # adaptive average pool adds
        flops += 2.0 * d             # modulation multiply-add
        per_res[k] = flops
    conv_total = sum(per_res.values())
    kk = len(cfg.active_resolutions)
    attn = 0.0
    if cfg.variant in ("full", "no-consistency") and conv_total > 0:
        attn += 2.0 * kk * d * 3 * d          # qkv projection
        attn += 2.0 * kk * kk * d * 2         # scores and context
        attn += 3.0 * cfg.heads * kk * kk     # softmax
        attn += 2.0 * kk * d * d              # output projection
    head = 2.0 * d if conv_total > 0 else 0.0
    fuse = float(kk * d) if conv_total > 0 else 0.0
    total = conv_total + attn + head + fuse
    return {"per_resolution": per_res, "attention": attn, "head": head,
            "fusion": fuse, "total": total, "total_mflops": total / 1e6}


# ---------------------------------------------------------------------------
# Grad-CAM
# ---------------------------------------------------------------------------

def grad_cam(spec_batches, params: ModelParams, cfg: ModelConfig,
             resolution_index: int, dataset_id: int = 0) -> np.ndarray:
    """Heatmap over the conv3 activation grid of one resolution.

    Channel weights are the spatial means of d(logit)/d(activation); the map
    is ReLU(sum_c w_c A_c), min-max normalized to [0,1]. Resolutions with no
    gradient path (single-res ablation, other resolution) give a zero map.
    """
    if resolution_index not in (1, 2, 3):
        raise ConfigError(f"resolution index must be 1..3, got {resolution_index}")
    trace = forward(spec_batches, params, cfg, dataset_id, encode_all=True)
    for t in trace.conv3_acts.values():
        t.retain_grad = True
    trace.logits.sum().backward()
    acts = trace.conv3_acts[resolution_index]
    if acts.shape[0] != 1:
        raise ConfigError("grad_cam expects a single-sample batch")
    a = acts.data[0]
    g = np.zeros_like(a) if acts.grad is None else acts.grad[0]
    weights = g.mean(axis=(1, 2))
    heat = np.maximum(0.0, np.tensordot(weights, a, axes=1))
    lo, hi = heat.min(), heat.max()
    if hi > lo:
        heat = (heat - lo) / (hi - lo)
    elif hi > 0:  # constant positive map
        heat = np.ones_like(heat)
    return heat


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path, arrays: dict[str, np.ndarray], cfg: ModelConfig):
    save_checkpoint(path, arrays, cfg.to_dict())


def load_model(path, expected_cfg: ModelConfig | None = None):
    expected = expected_cfg.to_dict() if expected_cfg is not None else None
    arrays, config = load_checkpoint(path, expected)
    return arrays, ModelConfig.from_dict(config)
