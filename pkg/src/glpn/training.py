"""Full-batch training loop shared by the GCN baseline and the GLPN model.

Models are plain functions ``forward(tape, params, x_in) -> Var``; parameters
are a ``{name: ndarray}`` dict.  To stop a refiner from learning the identity
on the entries it is scored on, every epoch feeds it a draft rebuilt from a
thinned copy of the training observations (entries are hidden at random) and
scores it on the training entries.  A fixed bank of such thinned drafts is
built once up front so the loop stays deterministic and cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .errors import ContractError, TrainingDivergence

Drafter = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    curve: List[float]
    val_curve: List[float] = field(default_factory=list)
    epochs: int = 0


def split_observed(mask, train_fraction: float, rng: np.random.Generator):
    """Split the observed entries into disjoint train / held-out masks."""
    mask = np.asarray(mask, dtype=float)
    obs = np.flatnonzero(mask.ravel() == 1)
    order = rng.permutation(obs.size)
    n_train = int(round(train_fraction * obs.size))
    train = np.zeros(mask.size)
    train[obs[order[:n_train]]] = 1.0
    val = np.zeros(mask.size)
    val[obs[order[n_train:]]] = 1.0
    return train.reshape(mask.shape), val.reshape(mask.shape)


def thin_mask(mask, drop: float, rng: np.random.Generator) -> np.ndarray:
    """Hide a ``drop`` fraction of the observed entries, keeping at least one
    observed entry per column."""
    mask = np.asarray(mask, dtype=float)
    keep = mask * (rng.random(mask.shape) >= drop)
    for j in np.flatnonzero(keep.sum(axis=0) == 0):
        rows = np.flatnonzero(mask[:, j] == 1)
        if rows.size:
            keep[rng.choice(rows), j] = 1.0
    return keep


def draft_bank(x, train_mask, drafter: Drafter, size: int, drop: float,
               rng: np.random.Generator):
    """Pairs ``(thinned mask, draft built from it)`` for training."""
    x0 = np.where(train_mask == 1, x, 0.0)
    bank = []
    for _ in range(size):
        m = thin_mask(train_mask, drop, rng) if drop > 0 else train_mask
        bank.append((m, drafter(x0 * m, m)))
    return bank


def masked_mse(tape: ad.Tape, out: ad.Var, target, mask) -> ad.Var:
    count = float(np.sum(mask))
    if count == 0:
        raise ContractError("loss mask selects no entries")
    return ad.masked_sse(out, tape.const(target), tape.const(mask)) * (1.0 / count)


def fit(forward, params: Dict[str, np.ndarray], x, train_mask, bank, epochs: int,
        lr: float = 0.001, val_mask=None, val_input=None,
        loss_on: str = "all") -> TrainResult:
    """Adam on the mean squared error over training entries.

    ``loss_on="hidden"`` scores only the entries hidden from the current
    bank input, ``"all"`` every training entry.
    """
    target = np.where(train_mask == 1, x, 0.0)
    state = ad.AdamState(lr=lr)
    curve, val_curve = [], []
    for epoch in range(epochs):
        m_in, x_in = bank[epoch % len(bank)]
        loss_mask = train_mask - m_in if loss_on == "hidden" else train_mask
        if loss_on == "hidden" and not loss_mask.any():
            loss_mask = train_mask
        tape = ad.Tape()
        pv = {k: tape.param(v, name=k) for k, v in params.items()}
        out = forward(tape, pv, x_in)
        loss = masked_mse(tape, out, target, loss_mask)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise TrainingDivergence(epoch, value)
        curve.append(value)
        grads = ad.backward(loss)
        params = ad.adam_step(params, grads, state)
        if val_mask is not None and val_mask.any():
            pred = predict(forward, params, val_input)
            diff = (pred - np.where(val_mask == 1, x, 0.0)) * val_mask
            val_curve.append(float(np.sqrt(np.sum(diff * diff) / np.sum(val_mask))))
    return TrainResult(params=params, curve=curve, val_curve=val_curve, epochs=epochs)


def predict(forward, params: Dict[str, np.ndarray], x_in) -> np.ndarray:
    tape = ad.Tape()
    pv = {k: tape.const(v) for k, v in params.items()}
    return forward(tape, pv, x_in).value


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
