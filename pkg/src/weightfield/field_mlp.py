"""Per-shape occupancy MLP: sinusoidal input encoding, forward evaluation,
overfitting to labeled point batches, canonical weight flattening, and
checkpoint persistence."""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import LabeledPointBatch, ScalarFieldGrid
from .optim import adam

CHECKPOINT_MAGIC = b"WFMLP1"


@dataclass(frozen=True)
class FieldMLPConfig:
    input_dim: int = 3  # 3 for static shapes, 4 with a time coordinate
    width: int = 128
    hidden_layers: int = 3
    frequencies: int = 4  # encoding frequency count L
    iso_level: float = 0.5  # occupancy threshold, applied post-sigmoid

    def __post_init__(self):
        if self.input_dim not in (3, 4):
            raise ValueError("input_dim must be 3 or 4")
        if self.width < 1 or self.hidden_layers < 1 or self.frequencies < 1:
            raise ValueError("width, hidden_layers, frequencies must be positive")

    @property
    def encoded_dim(self) -> int:
        return self.input_dim * 2 * self.frequencies

    @property
    def layer_dims(self) -> list[int]:
        return [self.encoded_dim] + [self.width] * self.hidden_layers + [1]

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))


def positional_encode(x: np.ndarray, frequencies: int = 4) -> np.ndarray:
    """(..., n) coordinates -> (..., n*2*L) features: per input dimension,
    (sin(2^k pi x), cos(2^k pi x)) for k = 0..L-1, sin/cos interleaved."""
    x = np.asarray(x, dtype=np.float32)
    scales = (2.0 ** np.arange(frequencies) * np.pi).astype(np.float32)
    args = x[..., :, None] * scales  # (..., n, L)
    enc = np.stack([np.sin(args), np.cos(args)], axis=-1)  # (..., n, L, 2)
    return np.ascontiguousarray(enc.reshape(*x.shape[:-1], x.shape[-1] * 2 * frequencies))


@dataclass
class FieldMLP:
    config: FieldMLPConfig
    weights: list[np.ndarray]  # W_l, each (out, in) float32
    biases: list[np.ndarray]  # b_l, each (out,) float32

    def __post_init__(self):
        dims = self.config.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} shape {w.shape}/{b.shape} does not match "
                                 f"config dims ({dims[i + 1]}, {dims[i]})")

    def logits(self, points: np.ndarray) -> np.ndarray:
        """Batched forward pass, (N, n) -> (N,) raw logits."""
        pts = np.asarray(points, dtype=np.float32)
        squeeze = pts.ndim == 1
        h = positional_encode(pts.reshape(-1, self.config.input_dim),
                              self.config.frequencies)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w.T + b, 0.0)
        out = (h @ self.weights[-1].T + self.biases[-1])[:, 0]
        return out[0] if squeeze else out

    def occupancy(self, points: np.ndarray) -> np.ndarray:
        from .tensor import _sigmoid
        return _sigmoid(np.atleast_1d(self.logits(points)))


EMPTY_SPACE_LOGIT = -2.0  # output-bias init; most of the volume is outside


def random_init(config: FieldMLPConfig, seed: int = 0) -> FieldMLP:
    """He-normal weights (fan-in scaled for ReLU), zero biases except the
    output bias, which starts at an empty-space prior: far from supervision
    the field then defaults to outside instead of hovering at the iso level."""
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    ws, bs = [], []
    for i in range(len(dims) - 1):
        std = np.sqrt(2.0 / dims[i])
        ws.append((rng.standard_normal((dims[i + 1], dims[i])) * std).astype(np.float32))
        bs.append(np.zeros(dims[i + 1], dtype=np.float32))
    bs[-1][:] = EMPTY_SPACE_LOGIT
    return FieldMLP(config, ws, bs)


# -- canonical flat form ---------------------------------------------------
@dataclass
class WeightVector:
    config: FieldMLPConfig
    values: np.ndarray  # (h,) float32

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        h = self.config.param_count
        if len(self.values) != h:
            raise ValueError(f"weight vector length mismatch: expected h={h}, "
                             f"got {len(self.values)}")

    def __len__(self) -> int:
        return len(self.values)


def flatten(mlp: FieldMLP) -> WeightVector:
    """Canonical order: W_0 row-major, b_0, W_1, b_1, ... (vector[0] = W_0[0,0])."""
    parts = []
    for w, b in zip(mlp.weights, mlp.biases):
        parts.append(w.ravel())
        parts.append(b)
    return WeightVector(mlp.config, np.concatenate(parts))


def unflatten(v: WeightVector) -> FieldMLP:
    dims = v.config.layer_dims
    ws, bs = [], []
    off = 0
    for i in range(len(dims) - 1):
        out_d, in_d = dims[i + 1], dims[i]
        ws.append(v.values[off:off + out_d * in_d].reshape(out_d, in_d).copy())
        off += out_d * in_d
        bs.append(v.values[off:off + out_d].copy())
        off += out_d
    return FieldMLP(v.config, ws, bs)


# -- checkpoints -----------------------------------------------------------
_HEADER = struct.Struct("<6sIIIIQ")  # magic, n, width, hidden_count, L, h


def save_checkpoint(v: WeightVector, path):
    c = v.config
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CHECKPOINT_MAGIC, c.input_dim, c.width,
                             c.hidden_layers, c.frequencies, len(v)))
        f.write(np.ascontiguousarray(v.values, dtype="<f4").tobytes())


def load_checkpoint(path, expect: FieldMLPConfig | None = None) -> WeightVector:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, n, width, hidden, freqs, h = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    config = FieldMLPConfig(input_dim=n, width=width, hidden_layers=hidden,
                            frequencies=freqs)
    if h != config.param_count:
        raise ValueError(f"{path}: header h={h} inconsistent with layer dims "
                         f"(expected {config.param_count})")
    if expect is not None and (expect.input_dim, expect.width, expect.hidden_layers,
                               expect.frequencies) != (n, width, hidden, freqs):
        raise ValueError(f"{path}: checkpoint config (n={n}, width={width}, "
                         f"hidden={hidden}, L={freqs}) does not match expectation")
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * h:
        raise ValueError(f"{path}: expected {4 * h} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return WeightVector(expect if expect is not None else config, values)


# -- fitting ---------------------------------------------------------------
@dataclass(frozen=True)
class FitConfig:
    epochs: int = 800
    minibatch: int = 2048
    lr: float = 1e-4
    seed: int = 0


@dataclass
class FitReport:
    final_loss: float
    iou: float
    epochs_run: int
    wall_seconds: float
    warnings: list[str] = field(default_factory=list)
    loss_curve: list[float] = field(default_factory=list)

    def to_dict(self, with_timing: bool = False) -> dict:
        d = {"final_loss": self.final_loss, "iou": self.iou,
             "epochs_run": self.epochs_run, "warnings": list(self.warnings)}
        if with_timing:
            d["wall_seconds"] = self.wall_seconds
        return d


def occupancy_iou(pred_inside: np.ndarray, true_inside: np.ndarray) -> float:
    """Intersection over union of two boolean masks; both-empty counts as 1."""
    a = np.asarray(pred_inside, dtype=bool).ravel()
    b = np.asarray(true_inside, dtype=bool).ravel()
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def fit_field(batch: LabeledPointBatch, init: WeightVector | None = None,
              config: FieldMLPConfig | None = None, fit: FitConfig = FitConfig(),
              eval_batch: LabeledPointBatch | None = None) -> tuple[WeightVector, FitReport]:
    """Overfit one MLP to a labeled point batch by minimizing mean BCE over
    shuffled minibatches.

    ``init`` seeds the parameters exactly when given (otherwise He-random from
    ``fit.seed``). The report's IoU comes from ``eval_batch`` when provided
    (typically a held-out grid) and from the training batch otherwise.
    """
    if len(batch.points) == 0:
        raise ValueError("empty supervision batch")
    if init is not None:
        config = init.config
    elif config is None:
        config = FieldMLPConfig(input_dim=batch.dimension)
    if config.input_dim != batch.dimension:
        raise ValueError(f"batch dimension {batch.dimension} does not match "
                         f"config input_dim {config.input_dim}")
    warnings = []
    if batch.labels.min() == batch.labels.max():
        warnings.append(f"supervision batch has a single class "
                        f"(all labels {int(batch.labels[0])})")

    t0 = time.perf_counter()
    mlp = unflatten(init) if init is not None else random_init(config, fit.seed)
    params = []
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        params.append(T.Tensor(w, requires_grad=True, name=f"W{i}"))
        params.append(T.Tensor(b, requires_grad=True, name=f"b{i}"))
    opt = adam(params, lr=fit.lr)

    enc = positional_encode(batch.points, config.frequencies)
    y = batch.labels.astype(np.float32)
    n = len(enc)
    rng = np.random.default_rng(fit.seed)
    curve = []
    for _ in range(fit.epochs):
        order = rng.permutation(n)
        total = 0.0
        steps = 0
        for s in range(0, n, fit.minibatch):
            idx = order[s:s + fit.minibatch]
            xb = T.Tensor(enc[idx])
            h = xb
            for i in range(config.hidden_layers):
                h = (h @ params[2 * i].transpose(1, 0) + params[2 * i + 1]).relu()
            logits = (h @ params[-2].transpose(1, 0) + params[-1]).reshape(-1)
            loss = T.bce_with_logits(logits, T.Tensor(y[idx])).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.data.item()
            steps += 1
        curve.append(total / steps)

    fitted = FieldMLP(config, [p.data for p in params[0::2]], [p.data for p in params[1::2]])
    vec = flatten(fitted)

    probe = eval_batch if eval_batch is not None else batch
    pred = fitted.logits(probe.points) > 0.0  # sigmoid(logit) > 0.5
    iou = occupancy_iou(pred, probe.labels.astype(bool))
    report = FitReport(final_loss=curve[-1] if curve else float("nan"),
                       iou=iou, epochs_run=fit.epochs,
                       wall_seconds=time.perf_counter() - t0, warnings=warnings,
                       loss_curve=curve)
    return vec, report


# -- dense evaluation ------------------------------------------------------
def field_to_grid(v: WeightVector, resolution: int = 64,
                  time_coord: float | None = None,
                  chunk: int = 65536) -> ScalarFieldGrid:
    """Sigmoid occupancy on a regular grid over [-0.5, 0.5]^3 (one fixed time
    slice for 4D fields)."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    c = v.config
    if c.input_dim == 4 and time_coord is None:
        raise ValueError("4D field evaluation requires a time coordinate")
    if c.input_dim == 3 and time_coord is not None:
        raise ValueError("time coordinate given for a 3D field")
    mlp = unflatten(v)
    ax = np.linspace(-0.5, 0.5, resolution, dtype=np.float32)
    out = np.empty(resolution ** 3, dtype=np.float32)
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    if c.input_dim == 4:
        pts = np.concatenate([pts, np.full((len(pts), 1), time_coord, np.float32)], axis=1)
    for s in range(0, len(pts), chunk):
        out[s:s + chunk] = mlp.occupancy(pts[s:s + chunk])
    return ScalarFieldGrid(out.reshape(resolution, resolution, resolution))
