"""Forward-only multi-mic separator: encoder, dual-path blocks, TAC, decoder.

Mirrors the transform-average-concatenate + dual-path transformer stack
with randomly initialized, seeded weights. There is no training here; the
point is to exercise the architecture's structural properties (shapes,
permutation behavior, pooling variants, cost accounting) exactly.

The dual-path feedforward is a plain position-wise two-layer net rather
than the recurrent-augmented original; the attention structure along both
chunk axes is kept. All math runs in float32, with mic averages
accumulated in float64 so they are insensitive to mic order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5

_ATTN_SLICE = 256   # sequences per attention batch slice, bounds peak memory

POOLING_MODES = ("mean", "reference-select")


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; defaults follow the reference setup."""

    kernel: int = 8
    stride: int = 4
    feature_dim: int = 64
    chunk: int = 250
    heads: int = 4
    pooling: str = "mean"

    def __post_init__(self):
        if self.stride * 2 != self.kernel:
            raise ValueError("stride must be half the kernel")
        if self.chunk <= 0 or self.chunk % 2 != 0:
            raise ValueError("chunk length must be positive and even")
        if self.feature_dim % self.heads != 0:
            raise ValueError("feature_dim must be divisible by heads")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")

    @property
    def head_dim(self) -> int:
        return self.feature_dim // self.heads

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.kernel:
            raise ValueError(f"need at least {self.kernel} samples, got {n_samples}")
        return (n_samples - self.kernel) // self.stride + 1

    def n_chunks(self, n_frames: int) -> int:
        hop = self.chunk // 2
        return int(np.ceil(n_frames / hop))


@dataclass(frozen=True)
class WeightBundle:
    """All layer parameters, keyed by dotted names, reproducible from seed."""

    params: dict
    seed: int
    config: NetConfig


def _weight_spec(cfg: NetConfig):
    """Ordered (name, shape, fan_in) list; the order fixes the RNG stream."""
    n = cfg.feature_dim
    spec = [("encoder.weight", (n, cfg.kernel), cfg.kernel),
            ("encoder.bias", (n,), cfg.kernel)]
    for i in range(5):
        for axis in ("intra", "inter"):
            base = f"block{i}.{axis}"
            for part in ("wq", "wk", "wv", "wo"):
                spec.append((f"{base}.attn.{part}", (n, n), n))
            for part in ("bq", "bk", "bv", "bo"):
                spec.append((f"{base}.attn.{part}", (n,), n))
            spec.append((f"{base}.ff.w1", (2 * n, n), n))
            spec.append((f"{base}.ff.b1", (2 * n,), n))
            spec.append((f"{base}.ff.w2", (n, 2 * n), 2 * n))
            spec.append((f"{base}.ff.b2", (n,), 2 * n))
    for j in range(2):
        spec.append((f"tac{j}.transform.w", (n, n), n))
        spec.append((f"tac{j}.transform.b", (n,), n))
        spec.append((f"tac{j}.project.w", (n, 2 * n), 2 * n))
        spec.append((f"tac{j}.project.b", (n,), 2 * n))
    spec.append(("mask.weight", (n, n), n))
    spec.append(("mask.bias", (n,), n))
    spec.append(("decoder.weight", (n, cfg.kernel), n))
    spec.append(("decoder.bias", (), n))
    return spec


def init_weights(cfg: NetConfig, seed: int) -> WeightBundle:
    """Seeded uniform init, [-a, a] with a = 1/sqrt(fan_in) per layer.

    Layer normalization scales start at 1 with zero shift. Nothing here
    depends on the mic count, so one bundle serves any array size.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in _weight_spec(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = (rng.uniform(-bound, bound, size=shape)).astype(np.float32)
    for i in range(5):
        for axis in ("intra", "inter"):
            for sub in ("attn", "ff"):
                base = f"block{i}.{axis}.{sub}.ln"
                params[f"{base}.gamma"] = np.ones(cfg.feature_dim, dtype=np.float32)
                params[f"{base}.beta"] = np.zeros(cfg.feature_dim, dtype=np.float32)
    return WeightBundle(params=params, seed=seed, config=cfg)


def encode(x, w: WeightBundle, cfg: NetConfig) -> np.ndarray:
    """Strided 1-D convolution plus rectification, per mic.

    Args:
        x: [M, T] (or [T]) waveform, T >= kernel.

    Returns:
        float32 features [M, N, T'] with T' = (T - kernel)//stride + 1.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float32))
    t_prime = cfg.n_frames(x.shape[1])
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.kernel, axis=1)
    frames = frames[:, ::cfg.stride][:, :t_prime]
    h = frames @ w.params["encoder.weight"].T + w.params["encoder.bias"]
    return np.maximum(h, 0.0).transpose(0, 2, 1).astype(np.float32, copy=False)


def segment(h, cfg: NetConfig) -> np.ndarray:
    """Split [M, N, T'] into half-overlapping chunks [M, N, K, P].

    The tail is zero-padded so the last chunk is full; P = ceil(T'/(K/2)).
    """
    h = np.asarray(h, dtype=np.float32)
    m, n, t_prime = h.shape
    k = cfg.chunk
    hop = k // 2
    p = cfg.n_chunks(t_prime)
    padded = np.zeros((m, n, (p - 1) * hop + k), dtype=np.float32)
    padded[:, :, :t_prime] = h
    idx = np.arange(k)[:, None] + hop * np.arange(p)[None, :]
    return padded[:, :, idx]


def overlap_add(chunks, t_prime: int) -> np.ndarray:
    """Inverse of segment: average chunk contributions, trim the padding."""
    chunks = np.asarray(chunks)
    m, n, k, p = chunks.shape
    hop = k // 2
    total = (p - 1) * hop + k
    out = np.zeros((m, n, total), dtype=np.float64)
    count = np.zeros(total)
    for j in range(p):
        out[:, :, j * hop:j * hop + k] += chunks[:, :, :, j]
        count[j * hop:j * hop + k] += 1.0
    out /= count
    if t_prime > total:
        raise ValueError("t_prime exceeds the chunked extent")
    return out[:, :, :t_prime].astype(np.float32)


def _layer_norm(x, gamma, beta):
    # normalizes the trailing feature axis
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + LN_EPS) * gamma + beta).astype(np.float32)


def _attention(x, p, prefix, cfg: NetConfig):
    """Multi-head self-attention over [B, L, N] sequences, sliced over B."""
    b, length, n = x.shape
    heads, dh = cfg.heads, cfg.head_dim
    q = x @ p[f"{prefix}.wq"].T + p[f"{prefix}.bq"]
    k = x @ p[f"{prefix}.wk"].T + p[f"{prefix}.bk"]
    v = x @ p[f"{prefix}.wv"].T + p[f"{prefix}.bv"]

    def split(t):
        return t.reshape(b, length, heads, dh).transpose(0, 2, 1, 3).reshape(b * heads, length, dh)

    q, k, v = split(q), split(k), split(v)
    scale = np.float32(1.0 / np.sqrt(dh))
    out = np.empty_like(q)
    for lo in range(0, b * heads, _ATTN_SLICE):
        hi = min(lo + _ATTN_SLICE, b * heads)
        scores = np.matmul(q[lo:hi], k[lo:hi].transpose(0, 2, 1)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        out[lo:hi] = np.matmul(scores, v[lo:hi])
    out = out.reshape(b, heads, length, dh).transpose(0, 2, 1, 3).reshape(b, length, n)
    return out @ p[f"{prefix}.wo"].T + p[f"{prefix}.bo"]


def _axis_stage(x, p, base: str, cfg: NetConfig):
    """One attention + feedforward stage with post-norm residuals, [B, L, N]."""
    x = _layer_norm(x + _attention(x, p, f"{base}.attn", cfg),
                    p[f"{base}.attn.ln.gamma"], p[f"{base}.attn.ln.beta"])
    ff = np.maximum(x @ p[f"{base}.ff.w1"].T + p[f"{base}.ff.b1"], 0.0)
    ff = ff @ p[f"{base}.ff.w2"].T + p[f"{base}.ff.b2"]
    return _layer_norm(x + ff, p[f"{base}.ff.ln.gamma"], p[f"{base}.ff.ln.beta"])


def dual_path_forward(h, w: WeightBundle, cfg: NetConfig, block: int) -> np.ndarray:
    """One dual-path block over chunked features [M, N, K, P].

    Attention + feedforward run along the intra-chunk axis first (each
    chunk is its own sequence), then along the inter-chunk axis (each
    chunk position attends across chunks). Output shape equals input.
    """
    h = np.asarray(h, dtype=np.float32)
    m, n, k, p = h.shape
    params = w.params

    # intra: sequences of length K, one per (mic, chunk)
    x = h.transpose(0, 3, 2, 1).reshape(m * p, k, n)
    x = _axis_stage(x, params, f"block{block}.intra", cfg)
    h = x.reshape(m, p, k, n).transpose(0, 3, 2, 1)

    # inter: sequences of length P, one per (mic, in-chunk position)
    x = h.transpose(0, 2, 3, 1).reshape(m * k, p, n)
    x = _axis_stage(x, params, f"block{block}.inter", cfg)
    return np.ascontiguousarray(x.reshape(m, k, p, n).transpose(0, 3, 1, 2))


def tac_forward(z, w: WeightBundle, cfg: NetConfig, tac: int) -> np.ndarray:
    """Transform-average-concatenate exchange across mics, [M, N, K, P].

    Each mic's feature vector is transformed, the transforms are averaged
    over mics, every mic concatenates its own transform with the average,
    and an affine projection plus residual maps back to N features. The
    average runs in float64 so mic order cannot perturb it.
    """
    z = np.asarray(z, dtype=np.float32)
    m, n, k, p = z.shape
    params = w.params
    x = z.transpose(0, 2, 3, 1)  # [M, K, P, N]
    t = np.maximum(x @ params[f"tac{tac}.transform.w"].T + params[f"tac{tac}.transform.b"], 0.0)
    avg = t.mean(axis=0, dtype=np.float64).astype(np.float32)
    cat = np.concatenate([t, np.broadcast_to(avg, t.shape)], axis=-1)
    proj = cat @ params[f"tac{tac}.project.w"].T + params[f"tac{tac}.project.b"]
    return (x + proj).transpose(0, 3, 1, 2)


def separator_forward(h0, w: WeightBundle, cfg: NetConfig, t_prime: int,
                      reference=None) -> np.ndarray:
    """Mask estimation over chunked multi-mic features.

    Three dual-path blocks interleaved with two TAC layers process all mic
    streams; pooling collapses mics (mean, or selection of the reference
    stream); two further dual-path blocks refine the single stream, the
    chunks are overlap-added and an affine + sigmoid head yields the mask.

    Args:
        h0: chunked features [M, N, K, P].
        t_prime: unpadded frame count for the output mask.
        reference: mic index, required for reference-select pooling.

    Returns:
        mask [N, t_prime] with entries in [0, 1].
    """
    h = np.asarray(h0, dtype=np.float32)
    m = h.shape[0]
    if cfg.pooling == "reference-select":
        if reference is None:
            raise ValueError("reference-select pooling needs a reference mic index")
        if not (0 <= reference < m):
            raise ValueError(f"reference index {reference} out of range for {m} mics")

    h = dual_path_forward(h, w, cfg, 0)
    h = tac_forward(h, w, cfg, 0)
    h = dual_path_forward(h, w, cfg, 1)
    h = tac_forward(h, w, cfg, 1)
    h = dual_path_forward(h, w, cfg, 2)

    if cfg.pooling == "mean":
        pooled = h.mean(axis=0, dtype=np.float64).astype(np.float32)[None]
    else:
        pooled = h[int(reference)][None]

    pooled = dual_path_forward(pooled, w, cfg, 3)
    pooled = dual_path_forward(pooled, w, cfg, 4)
    feats = overlap_add(pooled, t_prime)[0]  # [N, T']

    logits = feats.T @ w.params["mask.weight"].T + w.params["mask.bias"]
    mask = 1.0 / (1.0 + np.exp(-logits))
    return mask.T.astype(np.float32)


def decode(masked, w: WeightBundle, cfg: NetConfig, n_samples=None) -> np.ndarray:
    """Transposed 1-D convolution from masked features back to a waveform.

    Args:
        masked: [N, T'] masked encoder features.
        n_samples: optional output length; the natural length
            (T'-1)*stride + kernel is zero-padded or trimmed to match.

    Returns:
        float32 waveform.
    """
    feats = np.asarray(masked, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] != cfg.feature_dim:
        raise ValueError(f"expected [{cfg.feature_dim}, T'] features, got {feats.shape}")
    t_prime = feats.shape[1]
    natural = (t_prime - 1) * cfg.stride + cfg.kernel
    contrib = feats.T @ w.params["decoder.weight"]  # [T', kernel]
    out = np.zeros(natural, dtype=np.float32)
    for j in range(cfg.kernel):
        out[j:j + (t_prime - 1) * cfg.stride + 1:cfg.stride] += contrib[:, j]
    out += w.params["decoder.bias"]
    if n_samples is not None:
        if n_samples <= natural:
            out = out[:n_samples]
        else:
            out = np.concatenate([out, np.zeros(n_samples - natural, dtype=np.float32)])
    return out


def separate(x, w: WeightBundle, cfg: NetConfig, reference: int = 0) -> np.ndarray:
    """Full forward pass: encode, chunk, mask, apply to reference, decode.

    The mask always multiplies the reference mic's encoder features, for
    both pooling variants.

    Args:
        x: [M, T] mixture.
        reference: reference mic index.

    Returns:
        float32 waveform of T samples.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float32))
    m, t = x.shape
    if not (0 <= reference < m):
        raise ValueError(f"reference index {reference} out of range for {m} mics")
    h = encode(x, w, cfg)
    t_prime = h.shape[2]
    mask = separator_forward(segment(h, cfg), w, cfg, t_prime, reference=reference)
    return decode(mask * h[reference], w, cfg, n_samples=t)


def count_multiplies(cfg: NetConfig, m: int, t: int) -> dict:
    """Analytic multiply counts per stage for both pooling variants.

    Counts cover the matrix products of every stage plus the explicit
    1/M scaling of mic averages; softmax/sigmoid evaluations and
    additions are not multiplies and are excluded uniformly.
    """
    n = cfg.feature_dim
    k = cfg.chunk
    t_prime = cfg.n_frames(t)
    p = cfg.n_chunks(t_prime)

    def axis_cost(length, n_seq):
        # per sequence: qkv + out projections 4LN^2, scores + apply 2L^2N, ff 4LN^2
        per_seq = 8 * length * n * n + 2 * length * length * n
        return n_seq * per_seq

    def block_cost(streams):
        intra = axis_cost(k, streams * p)
        inter = axis_cost(p, streams * k)
        return intra + inter

    tac_cost = m * k * p * (n * n + 2 * n * n) + k * p * n  # transforms + projection + average scaling
    counts = {}
    for variant in POOLING_MODES:
        stage = {
            "encoder": m * t_prime * n * cfg.kernel,
            "pre_pool_blocks": 3 * block_cost(m),
            "tac": 2 * tac_cost,
            "pooling": k * p * n if variant == "mean" else 0,
            "post_pool_blocks": 2 * block_cost(1),
            "mask_head": t_prime * n * n,
            "decoder": t_prime * n * cfg.kernel,
        }
        stage["total"] = sum(stage.values())
        counts[variant] = stage
    return counts
