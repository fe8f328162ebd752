"""Set-to-set generative shape metrics: squared-distance Chamfer, temporal
distance for frame sequences, MMD, coverage, and 1-NNA.

Point clouds are plain (k, 3) float arrays; sequences are lists of clouds
sharing a point count. All distances run in float64 and match their
brute-force double-loop definitions bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CD_SCALE = 100.0  # reporting convention: Chamfer values are quoted x 10^2


def normalize_cloud(pc: np.ndarray) -> np.ndarray:
    """Center on the per-axis mean, then divide by the scalar std of all
    centered coordinate values (idempotent; zero-variance input is an error)."""
    pc = np.asarray(pc, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[0] < 2:
        raise ValueError("need at least 2 points to normalize")
    centered = pc - pc.mean(axis=0)
    std = centered.std()
    if std == 0.0:
        raise ValueError("cannot normalize a zero-variance point cloud")
    return centered / std


def chamfer(x: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    """Squared-distance Chamfer: mean over x of the nearest squared distance
    into y, plus the same with the roles swapped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("chamfer requires nonempty clouds")
    return float(_one_sided(x, y, chunk) + _one_sided(y, x, chunk))


def _one_sided(x: np.ndarray, y: np.ndarray, chunk: int) -> np.float64:
    mins = np.empty(len(x), dtype=np.float64)
    for s in range(0, len(x), chunk):
        diff = x[s:s + chunk, None, :] - y[None, :, :]
        mins[s:s + chunk] = np.sum(diff * diff, axis=-1).min(axis=1)
    return np.mean(mins)


def temporal_distance(x_frames, y_frames) -> float:
    """Mean per-frame Chamfer over two equally long frame sequences."""
    if len(x_frames) != len(y_frames):
        raise ValueError(f"frame-count mismatch: {len(x_frames)} vs {len(y_frames)}")
    if len(x_frames) == 0:
        raise ValueError("empty sequences")
    return float(np.mean([chamfer(a, b) for a, b in zip(x_frames, y_frames)]))


def distance_matrix(gen: list, ref: list, d=chamfer) -> np.ndarray:
    """(|gen|, |ref|) matrix of d(gen[i], ref[j])."""
    out = np.empty((len(gen), len(ref)), dtype=np.float64)
    for i, g in enumerate(gen):
        for j, r in enumerate(ref):
            out[i, j] = d(g, r)
    return out


def mmd(gen: list, ref: list, d=chamfer, matrix: np.ndarray | None = None) -> float:
    """Mean over reference items of the distance to their nearest generated item."""
    if not gen or not ref:
        raise ValueError("mmd requires nonempty sets")
    m = distance_matrix(gen, ref, d) if matrix is None else matrix
    return float(np.mean(m.min(axis=0)))


def cov(gen: list, ref: list, d=chamfer, matrix: np.ndarray | None = None) -> float:
    """Percentage of reference items that are the argmin (ties to the lowest
    index) for at least one generated item."""
    if not gen or not ref:
        raise ValueError("cov requires nonempty sets")
    m = distance_matrix(gen, ref, d) if matrix is None else matrix
    hit = np.unique(np.argmin(m, axis=1))
    return float(len(hit) / len(ref) * 100.0)


def one_nna(gen: list, ref: list, d=chamfer) -> float:
    """Leave-one-out 1-NN two-sample accuracy over the pooled set (generated
    first, then reference); ties go to the lowest pool index; 50% is optimal."""
    if len(gen) < 2 or len(ref) < 2:
        raise ValueError("one_nna requires at least 2 items per set")
    pool = list(gen) + list(ref)
    n = len(pool)
    is_gen = np.arange(n) < len(gen)
    dm = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            dm[i, j] = dm[j, i] = d(pool[i], pool[j])
    nearest = np.argmin(dm, axis=1)  # diagonal stays +inf: self excluded
    correct = np.sum(is_gen == is_gen[nearest])
    return float(correct / n * 100.0)


@dataclass
class MetricsReport:
    mmd_scaled: float  # Chamfer units x 10^2
    cov_percent: float
    one_nna_percent: float
    n_generated: int
    n_reference: int

    def to_dict(self) -> dict:
        return {
            "mmd_x100": self.mmd_scaled,
            "cov_percent": self.cov_percent,
            "one_nna_percent": self.one_nna_percent,
            "n_generated": self.n_generated,
            "n_reference": self.n_reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Aligned plain-text table, column order MMD, COV, 1-NNA."""
        head = f"{'MMD x100':>12}  {'COV %':>8}  {'1-NNA %':>8}"
        row = (f"{self.mmd_scaled:>12.4f}  {self.cov_percent:>8.2f}  "
               f"{self.one_nna_percent:>8.2f}")
        note = f"(|S_g| = {self.n_generated}, |S_r| = {self.n_reference})"
        return "\n".join([head, row, note])


def evaluate_sets(gen: list, ref: list, d=chamfer) -> MetricsReport:
    """MMD/COV from one shared generated-vs-reference distance matrix, plus
    pooled 1-NNA."""
    m = distance_matrix(gen, ref, d)
    return MetricsReport(
        mmd_scaled=mmd(gen, ref, d, matrix=m) * CD_SCALE,
        cov_percent=cov(gen, ref, d, matrix=m),
        one_nna_percent=one_nna(gen, ref, d),
        n_generated=len(gen),
        n_reference=len(ref),
    )
