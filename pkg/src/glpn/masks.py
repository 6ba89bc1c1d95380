"""Observation masks under MCAR / MAR / MNAR and MinMax feature scaling.

All randomness goes through ``numpy.random.Generator(PCG64(seed))`` so masks
are bit-identical across runs and platforms for a given seed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError


class Mechanism(str, enum.Enum):
    MCAR = "MCAR"
    MAR = "MAR"
    MNAR = "MNAR"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class MaskSpec:
    mechanism: Mechanism
    ratio: float
    seed: int = 0
    mar_observed_fraction: float = 0.2
    mar_driver_fraction: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(str(self.mechanism).upper()))
        if not 0.0 <= self.ratio <= 1.0:
            raise ContractError(f"ratio must lie in [0, 1], got {self.ratio}")
        for name in ("mar_observed_fraction", "mar_driver_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ContractError(f"{name} must lie in (0, 1), got {v}")


def _expect(spec: MaskSpec, mechanism: Mechanism):
    if spec.mechanism is not mechanism:
        raise ContractError(f"spec is {spec.mechanism.value}, expected {mechanism.value}")


def mcar_mask(n: int, d: int, spec: MaskSpec) -> np.ndarray:
    """Each entry dropped independently with probability ``spec.ratio``."""
    _expect(spec, Mechanism.MCAR)
    rng = make_rng(spec.seed)
    return (rng.random((n, d)) >= spec.ratio).astype(float)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def mar_mask(x, spec: MaskSpec) -> np.ndarray:
    """Logistic MAR mask.

    A random subset of driver columns (``mar_driver_fraction`` of ``d``) and a
    random subset of rows (``mar_observed_fraction`` of ``n``) are never
    masked.  Every other entry ``(i, j)`` goes missing with probability
    ``sigmoid(z_i . w_j + b)`` where ``z_i`` are the standardised driver
    values, ``w_j`` a random unit vector and ``b`` a shared intercept found by
    bisection so the realised missing fraction of maskable entries is as
    close to ``ratio`` as the entry count allows.
    """
    _expect(spec, Mechanism.MAR)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise ContractError("MAR needs a finite 2-D feature matrix")
    n, d = x.shape
    if d < 2:
        raise ContractError("MAR needs at least two columns (drivers and targets)")
    rng = make_rng(spec.seed)
    n_drivers = min(max(1, int(round(spec.mar_driver_fraction * d))), d - 1)
    cols = rng.permutation(d)
    drivers, targets = np.sort(cols[:n_drivers]), np.sort(cols[n_drivers:])
    n_keep = int(round(spec.mar_observed_fraction * n))
    rows = np.sort(rng.permutation(n)[n_keep:])

    mask = np.ones((n, d))
    if spec.ratio == 0.0 or rows.size == 0:
        return mask

    z = x[:, drivers]
    z = (z - z.mean(axis=0)) / (z.std(axis=0) + 1e-12)
    w = rng.normal(size=(n_drivers, targets.size))
    w /= np.linalg.norm(w, axis=0, keepdims=True) + 1e-12
    logits = (z @ w)[rows]
    u = rng.random(logits.shape)
    total = logits.size
    goal = int(round(spec.ratio * total))

    def count(b):
        return int(np.sum(u < _sigmoid(logits + b)))

    lo, hi = -60.0, 60.0
    b = 0.0
    for _ in range(200):
        b = 0.5 * (lo + hi)
        c = count(b)
        if c == goal:
            break
        if c < goal:
            lo = b
        else:
            hi = b
    missing = u < _sigmoid(logits + b)
    block = mask[np.ix_(rows, targets)]
    block[missing] = 0.0
    mask[np.ix_(rows, targets)] = block
    return mask


def mnar_mask(n: int, d: int, spec: MaskSpec) -> np.ndarray:
    """``ceil(ratio * n)`` whole rows removed, chosen uniformly."""
    _expect(spec, Mechanism.MNAR)
    rng = make_rng(spec.seed)
    k = min(n, math.ceil(spec.ratio * n - 1e-9))
    mask = np.ones((n, d))
    mask[rng.permutation(n)[:k]] = 0.0
    return mask


def make_mask(x, spec: MaskSpec) -> np.ndarray:
    n, d = np.shape(x)
    if spec.mechanism is Mechanism.MCAR:
        return mcar_mask(n, d, spec)
    if spec.mechanism is Mechanism.MAR:
        return mar_mask(x, spec)
    return mnar_mask(n, d, spec)


@dataclass(frozen=True)
class ScalingRecord:
    col_min: np.ndarray
    col_max: np.ndarray

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.col_max - self.col_min
        const = span == 0
        out = (x - self.col_min) / np.where(const, 1.0, span)
        return np.where(const, 0.5, out)

    def inverse(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.col_max - self.col_min
        return np.where(span == 0, self.col_min, x * span + self.col_min)

    def to_dict(self) -> dict:
        return {"min": self.col_min.tolist(), "max": self.col_max.tolist()}


def minmax_scale(x, mask=None):
    """Scale each column to [0, 1] from its observed entries.

    Returns ``(scaled, record)``; constant columns map to 0.5.  Unobserved
    entries are transformed with the same record (they may leave [0, 1]).
    """
    x = np.asarray(x, dtype=float)
    m = np.ones_like(x) if mask is None else np.asarray(mask, dtype=float)
    obs = np.where(m == 1, x, np.nan)
    seen = (m == 1).any(axis=0)
    if not seen.all():
        raise DataError(f"column {int(np.flatnonzero(~seen)[0])} has no observed entries")
    rec = ScalingRecord(np.nanmin(obs, axis=0), np.nanmax(obs, axis=0))
    return rec.transform(x), rec
