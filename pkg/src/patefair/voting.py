"""Teacher-ensemble voting: clean and Gaussian noisy-argmax labels, soft labels,
and label-flipping probabilities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import ModelParams, predict

SOFT_MODES = ("clamped", "raw")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class VoteRecord:
    """Vote tally for one sample; noisy fields are filled per draw."""

    counts: np.ndarray
    k: int
    clean_label: int
    soft: np.ndarray
    noisy_label: int | None = None
    noisy_soft: np.ndarray | None = field(default=None)

    @classmethod
    def from_counts(cls, counts) -> "VoteRecord":
        counts = np.asarray(counts, dtype=np.int64)
        k = int(counts.sum())
        if k < 1:
            raise ValueError("a vote record needs at least one vote")
        return cls(counts=counts, k=k, clean_label=int(np.argmax(counts)), soft=counts / k)


def tally(predictions: np.ndarray, class_count: int) -> np.ndarray:
    """Per-sample vote counts from a ``(k, m)`` matrix of teacher predictions."""
    predictions = np.asarray(predictions, dtype=np.int64)
    m = predictions.shape[1]
    counts = np.zeros((m, class_count), dtype=np.int64)
    for row in predictions:
        counts[np.arange(m), row] += 1
    return counts


def ensemble_counts(ensemble: Sequence[ModelParams], X: np.ndarray) -> np.ndarray:
    """Vote counts ``(m, C)`` of the ensemble on every row of ``X``."""
    if not ensemble:
        raise ValueError("empty teacher ensemble")
    C = ensemble[0].class_count
    X = np.atleast_2d(np.asarray(X, dtype=float))
    for t in ensemble:
        if t.d != X.shape[1] or t.class_count != C:
            raise ValueError("teachers disagree with each other or with the input dimension")
    return tally(np.stack([predict(t, X) for t in ensemble]), C)


def vote_counts(ensemble: Sequence[ModelParams], x) -> VoteRecord:
    counts = ensemble_counts(ensemble, np.atleast_2d(np.asarray(x, dtype=float)))
    return VoteRecord.from_counts(counts[0])


def clean_labels(counts: np.ndarray) -> np.ndarray:
    """Argmax of counts; ties go to the lowest class index."""
    return np.argmax(counts, axis=-1)


def soft_labels(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    return counts / counts.sum(axis=-1, keepdims=True)


def noisy_counts(counts: np.ndarray, sigma: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """``counts + N(0, sigma^2)`` with fresh draws per class; optional leading repetition axis."""
    counts = np.asarray(counts, dtype=float)
    shape = counts.shape if size is None else (size,) + counts.shape
    return counts + rng.normal(0.0, sigma, size=shape)


def noisy_hard_labels(counts: np.ndarray, sigma: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    return np.argmax(noisy_counts(counts, sigma, rng, size), axis=-1)


def clamp_soft(raw: np.ndarray) -> np.ndarray:
    """Zero out negative weights and renormalize each row to sum 1.

    Rows with no positive entry become one-hot at their largest entry.
    """
    raw = np.asarray(raw, dtype=float)
    pos = np.maximum(raw, 0.0)
    total = pos.sum(axis=-1, keepdims=True)
    fallback = np.eye(raw.shape[-1])[np.argmax(raw, axis=-1)]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, pos / safe, fallback)


def noisy_soft_labels(
    counts: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(clamped, raw)`` noisy soft labels ``(counts + noise) / k``."""
    counts = np.asarray(counts, dtype=float)
    k = counts.sum(axis=-1, keepdims=True)
    raw = noisy_counts(counts, sigma, rng, size) / k
    return clamp_soft(raw), raw


def noisy_hard_label(rec: VoteRecord, noise: NoiseSpec, rng: np.random.Generator) -> int:
    return int(noisy_hard_labels(rec.counts, noise.sigma, rng))


def noisy_soft_label(
    rec: VoteRecord, noise: NoiseSpec, rng: np.random.Generator, mode: str = "clamped"
) -> tuple[np.ndarray, np.ndarray]:
    """Noisy soft label of one record as ``(processed, raw)``.

    ``mode="clamped"`` (default) clips negatives and renormalizes;
    ``mode="raw"`` returns the unprocessed values in both slots.
    """
    if mode not in SOFT_MODES:
        raise ValueError(f"unknown soft-label mode {mode!r}")
    clamped, raw = noisy_soft_labels(rec.counts, noise.sigma, rng)
    return (clamped if mode == "clamped" else raw), raw


def flip_prob_closed(k: float, sigma: float) -> float:
    """Flip probability of a unanimous binary vote: ``1 - Phi(k / (sqrt(2) sigma))``."""
    if k < 0 or not sigma > 0:
        raise ValueError("need k >= 0 and sigma > 0")
    z = k / (math.sqrt(2.0) * sigma)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def flip_prob_mc(rec: VoteRecord, noise: NoiseSpec, trials: int) -> tuple[float, float]:
    """Monte Carlo flip frequency and its binomial standard error."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(noise.seed)
    flips = noisy_hard_labels(rec.counts, noise.sigma, rng, size=trials) != rec.clean_label
    p = float(flips.mean())
    return p, math.sqrt(p * (1.0 - p) / trials)


def flip_probs_mc(
    counts: np.ndarray, sigma: float, rng: np.random.Generator, trials: int, chunk: int = 2000
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample flip-frequency estimates and standard errors for a count matrix."""
    counts = np.asarray(counts)
    clean = clean_labels(counts)
    hits = np.zeros(counts.shape[0])
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        hits += (noisy_hard_labels(counts, sigma, rng, size=b) != clean).sum(axis=0)
        done += b
    p = hits / trials
    return p, np.sqrt(p * (1.0 - p) / trials)


def write_votes_csv(
    path: str | Path,
    counts: np.ndarray,
    flip_prob: np.ndarray | None = None,
    flip_se: np.ndarray | None = None,
) -> None:
    """One row per public sample: counts, clean label, soft label, flip-probability estimate."""
    counts = np.asarray(counts)
    C = counts.shape[1]
    soft = soft_labels(counts)
    clean = clean_labels(counts)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["sample", *[f"count_{c}" for c in range(C)], "clean_label", *[f"soft_{c}" for c in range(C)]]
        if flip_prob is not None:
            head += ["flip_prob", "flip_prob_se"]
        w.writerow(head)
        for i in range(counts.shape[0]):
            row = [i, *map(int, counts[i]), int(clean[i]), *(repr(float(v)) for v in soft[i])]
            if flip_prob is not None:
                se = 0.0 if flip_se is None else flip_se[i]
                row += [repr(float(flip_prob[i])), repr(float(se))]
            w.writerow(row)


def read_votes_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read back ``(counts, flip_prob)`` from :func:`write_votes_csv` output."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros((0, 0), dtype=np.int64), None
    ccols = sorted((c for c in rows[0] if c.startswith("count_")), key=lambda c: int(c.split("_")[1]))
    counts = np.array([[int(r[c]) for c in ccols] for r in rows], dtype=np.int64)
    flips = np.array([float(r["flip_prob"]) for r in rows]) if "flip_prob" in rows[0] else None
    return counts, flips
