"""Diffusion over flattened MLP weight vectors: linear noise schedule,
per-layer tokenization, transformer denoiser predicting the clean vector,
training loop, deterministic DDIM sampling, and sample de-duplication."""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .field_mlp import FieldMLPConfig
from .optim import AdamW
from .tensor import Tensor

log = logging.getLogger(__name__)

MODEL_MAGIC = b"WFDIF1"


# -- schedule --------------------------------------------------------------
class NoiseSchedule:
    """Linear betas over T steps with cumulative signal-retention products.

    ``beta(t)`` and ``alpha_bar(t)`` use 1-based step indices; ``alpha_bar(0)``
    is defined as 1 (the no-noise limit the sampler terminates on).
    """

    def __init__(self, timesteps: int = 500, beta_start: float = 1e-4,
                 beta_end: float = 2e-2):
        if timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if not 0.0 < beta_start < beta_end < 1.0:
            raise ValueError("need 0 < beta_start < beta_end < 1")
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.betas = np.linspace(beta_start, beta_end, timesteps)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.timesteps:
            raise ValueError(f"t={t} outside [0, {self.timesteps}]")
        return float(self.alpha_bars[t])

    def _check(self, t: int):
        if not 1 <= t <= self.timesteps:
            raise ValueError(f"t={t} outside [1, {self.timesteps}]")


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    schedule._check(t)
    x0 = _vec(x0)
    eps = _vec(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match x0 {x0.shape}")
    ab = schedule.alpha_bar(t)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(np.float32)


def _vec(x) -> np.ndarray:
    values = getattr(x, "values", x)  # WeightVector or plain array
    return np.ascontiguousarray(values, dtype=np.float32)


# -- tokenization ----------------------------------------------------------
@dataclass(frozen=True)
class TokenLayout:
    """(start, length) spans cutting a flat vector into per-layer tokens:
    token 2l covers W_l, token 2l+1 covers b_l."""
    spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        off = 0
        for start, length in self.spans:
            if start != off or length < 1:
                raise ValueError("token spans must partition [0, h) contiguously")
            off = start + length
        if not self.spans:
            raise ValueError("empty token layout")

    @classmethod
    def for_mlp(cls, cfg: FieldMLPConfig) -> "TokenLayout":
        dims = cfg.layer_dims
        spans = []
        off = 0
        for i in range(len(dims) - 1):
            w = dims[i + 1] * dims[i]
            spans.append((off, w))
            off += w
            spans.append((off, dims[i + 1]))
            off += dims[i + 1]
        return cls(tuple(spans))

    @property
    def count(self) -> int:
        return len(self.spans)

    @property
    def total(self) -> int:
        start, length = self.spans[-1]
        return start + length

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(x)
        if x.shape[-1] != self.total:
            raise ValueError(f"vector length {x.shape[-1]} != layout total {self.total}")
        return [x[..., s:s + n] for s, n in self.spans]

    def join(self, parts: list[np.ndarray]) -> np.ndarray:
        if len(parts) != self.count:
            raise ValueError("part count mismatch")
        return np.concatenate(parts, axis=-1)


# -- denoiser --------------------------------------------------------------
@dataclass(frozen=True)
class DenoiserConfig:
    layout: TokenLayout
    hidden_size: int = 256  # full-scale setting: 2880
    layers: int = 6  # full-scale: 12
    heads: int = 8  # full-scale: 16
    timesteps: int = 500
    freq_base: float = 10000.0  # sinusoidal timestep-embedding base

    def __post_init__(self):
        if self.hidden_size % self.heads != 0:
            raise ValueError("hidden_size must be divisible by heads")
        if self.hidden_size % 2 != 0:
            raise ValueError("hidden_size must be even for sin/cos embedding")


def sinusoidal_embedding(t: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """Interleaved (sin, cos) pairs over geometrically spaced frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    inv = base ** (-np.arange(half) / half)
    args = t[:, None] * inv
    out = np.empty((len(t), dim), dtype=np.float32)
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


class TransformerDenoiser:
    """Pre-layer-norm transformer over per-layer weight tokens plus one
    timestep token; predicts the clean weight vector (x0) directly.

    Parameter tensors live in ``self.params`` in declaration order, which is
    also the checkpoint serialization order.
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.params: list[Tensor] = []
        rng = np.random.default_rng(seed)
        H = config.hidden_size

        def p(name, shape, kind="normal"):
            if kind == "normal":
                data = rng.standard_normal(shape) * 0.02
            elif kind == "zeros":
                data = np.zeros(shape)
            elif kind == "ones":
                data = np.ones(shape)
            t = Tensor(data.astype(np.float32) if hasattr(data, "astype") else data,
                       requires_grad=True, name=name)
            self.params.append(t)
            return t

        self.in_w = [p(f"in_proj.{i}.w", (n, H)) for i, (_, n) in enumerate(config.layout.spans)]
        self.in_b = [p(f"in_proj.{i}.b", (H,), "zeros") for i in range(config.layout.count)]
        self.time_w = p("time_proj.w", (H, H))
        self.time_b = p("time_proj.b", (H,), "zeros")
        self.pos_emb = p("pos_emb", (config.layout.count + 1, H))
        self.blocks = []
        for li in range(config.layers):
            blk = {
                "ln1_g": p(f"block.{li}.ln1.g", (H,), "ones"),
                "ln1_b": p(f"block.{li}.ln1.b", (H,), "zeros"),
                "qkv_w": p(f"block.{li}.attn.qkv.w", (H, 3 * H)),
                "qkv_b": p(f"block.{li}.attn.qkv.b", (3 * H,), "zeros"),
                "out_w": p(f"block.{li}.attn.out.w", (H, H)),
                "out_b": p(f"block.{li}.attn.out.b", (H,), "zeros"),
                "ln2_g": p(f"block.{li}.ln2.g", (H,), "ones"),
                "ln2_b": p(f"block.{li}.ln2.b", (H,), "zeros"),
                "ff1_w": p(f"block.{li}.ff1.w", (H, 4 * H)),
                "ff1_b": p(f"block.{li}.ff1.b", (4 * H,), "zeros"),
                "ff2_w": p(f"block.{li}.ff2.w", (4 * H, H)),
                "ff2_b": p(f"block.{li}.ff2.b", (H,), "zeros"),
            }
            self.blocks.append(blk)
        self.lnf_g = p("ln_f.g", (H,), "ones")
        self.lnf_b = p("ln_f.b", (H,), "zeros")
        self.out_w = [p(f"out_proj.{i}.w", (H, n)) for i, (_, n) in enumerate(config.layout.spans)]
        self.out_b = [p(f"out_proj.{i}.b", (n,), "zeros")
                      for i, (_, n) in enumerate(config.layout.spans)]

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x_t: np.ndarray, t: np.ndarray) -> Tensor:
        """(B, h) noisy vectors + (B,) integer steps -> (B, h) predicted x0."""
        cfg = self.config
        x_t = np.asarray(x_t, dtype=np.float32)
        B = x_t.shape[0]
        H, nh = cfg.hidden_size, cfg.heads
        hd = H // nh
        S = cfg.layout.count + 1

        toks = [T.reshape(Tensor(x_t[:, s:s + n]) @ self.in_w[i] + self.in_b[i], (B, 1, H))
                for i, (s, n) in enumerate(cfg.layout.spans)]
        temb = Tensor(sinusoidal_embedding(t, H, cfg.freq_base)) @ self.time_w + self.time_b
        seq = T.concat([T.reshape(temb, (B, 1, H))] + toks, axis=1) + self.pos_emb

        scale = 1.0 / math.sqrt(hd)
        for blk in self.blocks:
            a = T.layer_norm(seq, blk["ln1_g"], blk["ln1_b"])
            qkv = a @ blk["qkv_w"] + blk["qkv_b"]
            q, k, v = (T.narrow(qkv, 2, i * H, H) for i in range(3))
            q = T.reshape(q, (B, S, nh, hd)).transpose(0, 2, 1, 3)
            k = T.reshape(k, (B, S, nh, hd)).transpose(0, 2, 1, 3)
            v = T.reshape(v, (B, S, nh, hd)).transpose(0, 2, 1, 3)
            att = T.softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1)
            o = T.reshape((att @ v).transpose(0, 2, 1, 3), (B, S, H))
            seq = seq + (o @ blk["out_w"] + blk["out_b"])
            f = T.layer_norm(seq, blk["ln2_g"], blk["ln2_b"])
            f = T.gelu(f @ blk["ff1_w"] + blk["ff1_b"]) @ blk["ff2_w"] + blk["ff2_b"]
            seq = seq + f
        seq = T.layer_norm(seq, self.lnf_g, self.lnf_b)

        outs = [T.reshape(T.narrow(seq, 1, i + 1, 1), (B, H)) @ self.out_w[i] + self.out_b[i]
                for i in range(cfg.layout.count)]  # timestep token (index 0) discarded
        return T.concat(outs, axis=1)

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def load_state_arrays(self, arrays: list[np.ndarray]):
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(self.params, arrays):
            if p.data.shape != a.shape:
                raise ValueError(f"shape mismatch for {p.name}: {p.data.shape} vs {a.shape}")
            p.data = np.ascontiguousarray(a, dtype=np.float32)

    def copy_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]


def denoise(model: TransformerDenoiser, x_t, t: int) -> np.ndarray:
    """Single-vector convenience wrapper around the batched forward pass."""
    if not 1 <= t <= model.config.timesteps:
        raise ValueError(f"t={t} outside [1, {model.config.timesteps}]")
    x = _vec(x_t)
    if x.ndim != 1 or len(x) != model.config.layout.total:
        raise ValueError(f"expected flat vector of length {model.config.layout.total}, "
                         f"got shape {x.shape}")
    out = model.forward(x[None, :], np.array([t]))
    return out.data[0].copy()


# -- checkpoints -----------------------------------------------------------
def save_model(model: TransformerDenoiser, path):
    cfg = model.config
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IIIId", cfg.hidden_size, cfg.layers, cfg.heads,
                            cfg.timesteps, cfg.freq_base))
        f.write(struct.pack("<I", cfg.layout.count))
        for s, n in cfg.layout.spans:
            f.write(struct.pack("<QQ", s, n))
        for p in model.params:
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_model(path) -> TransformerDenoiser:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:6] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:6]!r}")
    off = 6
    hidden, layers, heads, timesteps, freq_base = struct.unpack_from("<IIIId", raw, off)
    off += struct.calcsize("<IIIId")
    (n_tokens,) = struct.unpack_from("<I", raw, off)
    off += 4
    spans = []
    for _ in range(n_tokens):
        s, n = struct.unpack_from("<QQ", raw, off)
        off += 16
        spans.append((int(s), int(n)))
    cfg = DenoiserConfig(layout=TokenLayout(tuple(spans)), hidden_size=hidden,
                         layers=layers, heads=heads, timesteps=timesteps,
                         freq_base=freq_base)
    model = TransformerDenoiser(cfg, seed=0)
    for p in model.params:
        nbytes = p.data.size * 4
        if off + nbytes > len(raw):
            raise ValueError(f"{path}: truncated at parameter {p.name}")
        p.data = np.frombuffer(raw, dtype="<f4", count=p.data.size,
                               offset=off).reshape(p.data.shape).copy()
        off += nbytes
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return model


# -- training --------------------------------------------------------------
@dataclass(frozen=True)
class DiffusionTrainConfig:
    epochs: int = 1000  # full-scale runs use ~4000
    batch_size: int = 32
    lr: float = 2e-4
    lr_decay: float = 0.8  # multiplier applied every lr_decay_every epochs
    lr_decay_every: int = 200
    weight_decay: float = 0.01
    seed: int = 0
    normalize: bool = False  # optional per-coordinate standardization
    snapshot_every: int = 50  # divergence-recovery granularity


@dataclass
class TrainResult:
    model: TransformerDenoiser
    losses: list[float]
    lrs: list[float]
    epochs_run: int
    aborted: bool = False
    abort_reason: str | None = None
    mean: np.ndarray | None = None  # set when cfg.normalize
    std: np.ndarray | None = None


def lr_at_epoch(cfg: DiffusionTrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def train(dataset: list, cfg: DiffusionTrainConfig, schedule: NoiseSchedule,
          model: TransformerDenoiser | None = None,
          denoiser_config: DenoiserConfig | None = None,
          start_epoch: int = 0, optimizer_state: dict | None = None,
          epoch_callback=None) -> TrainResult:
    """Train the denoiser with per-batch MSE between predicted and clean
    weight vectors.

    Every epoch draws its randomness from ``default_rng([seed, epoch])``, so a
    resumed run (``start_epoch`` > 0 with restored model/optimizer state)
    continues the exact same stream. On divergence the model is rolled back to
    the last snapshot and the result is flagged aborted.
    """
    if not dataset:
        raise ValueError("empty training set")
    data = np.stack([_vec(v) for v in dataset]).astype(np.float32)
    n, h = data.shape
    mean = std = None
    if cfg.normalize:
        mean = data.mean(axis=0)
        std = data.std(axis=0) + 1e-8
        data = (data - mean) / std
    if model is None:
        if denoiser_config is None:
            raise ValueError("need either a model or a denoiser_config")
        model = TransformerDenoiser(denoiser_config, seed=cfg.seed)
    if model.config.layout.total != h:
        raise ValueError(f"model expects h={model.config.layout.total}, data has {h}")
    if schedule.timesteps != model.config.timesteps:
        raise ValueError("schedule and model disagree on timesteps")

    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    losses: list[float] = []
    lrs: list[float] = []
    good_state = model.copy_state()
    good_epoch = start_epoch - 1
    steps = max(1, math.ceil(n / cfg.batch_size))

    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        opt.lr = lr_at_epoch(cfg, epoch)
        if n >= cfg.batch_size:
            order = rng.permutation(n)
            batches = [order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
        else:
            batches = [rng.integers(0, n, cfg.batch_size) for _ in range(steps)]
        total = 0.0
        try:
            for idx in batches:
                x0 = data[idx]
                t = rng.integers(1, schedule.timesteps + 1, size=len(idx))
                eps = rng.standard_normal(x0.shape).astype(np.float32)
                ab = schedule.alpha_bars[t][:, None]
                x_t = (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(np.float32)
                pred = model.forward(x_t, t)
                loss = ((pred - Tensor(x0)) * (pred - Tensor(x0))).mean()
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.data.item()
        except FloatingPointError as e:
            model.load_state_arrays(good_state)
            return TrainResult(model, losses, lrs, epochs_run=epoch, aborted=True,
                               abort_reason=f"epoch {epoch}: {e} "
                                            f"(rolled back to epoch {good_epoch})",
                               mean=mean, std=std)
        epoch_loss = total / len(batches)
        if not math.isfinite(epoch_loss):
            model.load_state_arrays(good_state)
            return TrainResult(model, losses, lrs, epochs_run=epoch, aborted=True,
                               abort_reason=f"epoch {epoch}: non-finite loss "
                                            f"(rolled back to epoch {good_epoch})",
                               mean=mean, std=std)
        losses.append(epoch_loss)
        lrs.append(opt.lr)
        if (epoch + 1) % cfg.snapshot_every == 0:
            good_state = model.copy_state()
            good_epoch = epoch
        if epoch_callback is not None:
            epoch_callback(epoch, model, opt, epoch_loss)
    return TrainResult(model, losses, lrs, epochs_run=cfg.epochs - start_epoch,
                       mean=mean, std=std)


# -- sampling --------------------------------------------------------------
def ddim_sample(model: TransformerDenoiser, schedule: NoiseSchedule, seed: int,
                steps: int | None = None,
                trajectory=None) -> np.ndarray | tuple[np.ndarray, dict[int, np.ndarray]]:
    """Deterministic (eta = 0) reverse process from pure noise; every timestep
    is visited (``steps`` other than T is rejected).

    ``trajectory`` is an iterable of iteration counts at which to keep a copy
    of the running estimate: 0 stores the initial noise, count k >= 1 stores
    the x0 prediction after k denoising iterations (k = T equals the result).
    """
    T_ = schedule.timesteps
    if steps is not None and steps != T_:
        raise ValueError(f"timestep skipping is not supported: steps must be {T_}")
    if schedule.timesteps != model.config.timesteps:
        raise ValueError("schedule and model disagree on timesteps")
    h = model.config.layout.total
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(h).astype(np.float32)
    want = set() if trajectory is None else {int(s) for s in trajectory}
    snapshots: dict[int, np.ndarray] = {}
    if 0 in want:
        snapshots[0] = x.copy()
    for t in range(T_, 0, -1):
        xhat0 = model.forward(x[None, :], np.array([t])).data[0]
        ab_t = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(t - 1)
        eps_hat = (x - np.sqrt(ab_t) * xhat0) / np.sqrt(1.0 - ab_t)
        x = (np.sqrt(ab_prev) * xhat0 + np.sqrt(1.0 - ab_prev) * eps_hat).astype(np.float32)
        k = T_ - t + 1
        if k in want:
            snapshots[k] = xhat0.astype(np.float32).copy()
    if trajectory is not None:
        return x, snapshots
    return x


def dedupe(samples: list, extract, threshold: float) -> list:
    """Greedy filter: keep a sample iff its distance (via ``extract`` into
    point clouds and Chamfer) to every already-kept sample exceeds
    ``threshold``. Samples whose extraction fails are dropped with a warning.
    """
    from .metrics import chamfer
    kept = []
    kept_clouds = []
    for i, s in enumerate(samples):
        try:
            cloud = extract(s)
        except Exception as e:  # extraction is best-effort by contract
            log.warning("dedupe: dropping sample %d (extraction failed: %s)", i, e)
            continue
        if all(chamfer(cloud, c) > threshold for c in kept_clouds):
            kept.append(s)
            kept_clouds.append(cloud)
    return kept
