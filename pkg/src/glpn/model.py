"""Graph Laplacian Pyramid Network: draft stage, pooling pyramid, Maclaurin
residual branch, combination, loss and training.

Shapes: ``n`` nodes, ``d`` features, ``r_l`` clusters at pyramid level ``l``
(``r_0 = n``).  Level ``l`` pools with ``S_l`` of shape ``(r_l, r_{l+1})``.

Forward pass for ``L`` levels::

    S_l      = softmax(tanh(X_l W1_l) W2_l)          X_{l+1} = S_l^T X_l
    A_{l+1}  = softmax(S_l^T A_l S_l)
    R_l      = act((I + sum_m Lap_l^m / m!) X_l W3_l)   for l < L
    U_L      = X_L,   U_l = S_l (U_{l+1} + R_{l+1})  (R_L = 0)
    X_hat    = alpha * U_0 W_up + R_0    [-> optional final diffusion layer]

``Lap_0`` is the augmented normalised Laplacian of the input graph and
``Lap_l = I - A_l`` (random-walk form of the row-stochastic coarse graph) for
``l >= 1``.  With one level, identity activation, ``W3 = I``, order one and
no final layer (``W_up = I``) this is exactly ``(I + Lap) X + alpha S S^T X``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import baselines, training
from .errors import ContractError, DataError, DimensionError
from .graph import Graph, augmented_laplacian
from .masks import make_rng

DRAFT_KINDS = ("mean", "soft", "knn", "dgcn", "gcn")
PARAMS_FORMAT = "glpn-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class GlpnConfig:
    levels: int = 1
    clusters: Optional[Tuple[int, ...]] = None
    dgcn_steps: int = 2
    maclaurin_order: int = 3
    alpha: float = 1.0
    draft: str = "dgcn"
    hidden: int = 100
    epochs: int = 800
    lr: float = 0.001
    seed: int = 0
    residual_activation: str = "identity"
    use_residual: bool = True
    use_pyramid: bool = True
    final_dgcn: bool = True
    knn_hops: int = 1
    soft_lambda: float = 0.1
    train_fraction: float = 0.8
    bank_size: int = 32
    drop: float = 0.2
    loss_on: str = "hidden"

    def __post_init__(self):
        if self.levels < 1 or self.dgcn_steps < 1 or self.maclaurin_order < 1 or self.hidden < 1:
            raise ContractError("levels, dgcn_steps, maclaurin_order and hidden must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.alpha < 0:
            raise ContractError("alpha must be >= 0")
        if self.draft not in DRAFT_KINDS:
            raise ContractError(f"draft must be one of {DRAFT_KINDS}, got {self.draft!r}")
        if not (self.use_residual or self.use_pyramid):
            raise ContractError("at least one of the residual and pyramid branches must be on")
        if self.clusters is not None:
            object.__setattr__(self, "clusters", tuple(int(c) for c in self.clusters))
            if len(self.clusters) != self.levels:
                raise ContractError("need one cluster count per level")

    def cluster_sizes(self, n: int) -> Tuple[int, ...]:
        """Cluster counts per level; defaults shrink ``n`` by 0.3 per level."""
        sizes = self.clusters
        if sizes is None:
            sizes, cur = [], n
            for _ in range(self.levels):
                cur = max(1, int(round(0.3 * cur)))
                sizes.append(cur)
            sizes = tuple(sizes)
        prev = n
        for r in sizes:
            if not 1 <= r < prev:
                raise ContractError(f"cluster counts must strictly decrease below n={n}: {sizes}")
            prev = r
        return tuple(sizes)

    @classmethod
    def analysis(cls, alpha: float = 1.0, order: int = 1, clusters=None, **kw) -> "GlpnConfig":
        """Linear one-level configuration used for the energy analysis."""
        return cls(levels=1, clusters=clusters, alpha=alpha, maclaurin_order=order,
                   residual_activation="identity", final_dgcn=False, **kw)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["clusters"] = list(self.clusters) if self.clusters is not None else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GlpnConfig":
        data = dict(data)
        if data.get("clusters") is not None:
            data["clusters"] = tuple(data["clusters"])
        return cls(**data)


@dataclass
class GlpnParams:
    """Learnable weights keyed by name plus how they were initialised.

    Keys: ``theta_final`` (``M x 2``), ``w_up`` (``d x d`` pyramid decoder),
    ``w1_l``/``w2_l`` (pooling) and ``w3_l`` (residual) for each level ``l``.
    """

    weights: Dict[str, np.ndarray]
    init: dict = field(default_factory=dict)

    def copy(self) -> "GlpnParams":
        return GlpnParams({k: v.copy() for k, v in self.weights.items()}, dict(self.init))


def random_walk(a) -> np.ndarray:
    """``D^{-1} A``; rows of isolated nodes stay zero."""
    a = np.asarray(a, dtype=float)
    deg = a.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return inv[:, None] * a


def maclaurin_filter(lap, order: int) -> np.ndarray:
    """``I + sum_{m=1}^{order} lap^m / m!`` as a dense matrix."""
    lap = np.asarray(lap, dtype=float)
    out = np.eye(lap.shape[0])
    term = np.eye(lap.shape[0])
    for m in range(1, order + 1):
        term = term @ lap / m
        out = out + term
    return out


# -- differentiable building blocks ---------------------------------------


def _unit(k: int, i: int, row: bool) -> np.ndarray:
    e = np.zeros((1, k) if row else (k, 1))
    e.flat[i] = 1.0
    return e


def _theta_entry(tape, theta: ad.Var, m: int, k: int) -> ad.Var:
    rows = theta.shape[0]
    return tape.const(_unit(rows, m, True)) @ theta @ tape.const(_unit(2, k, False))


def dgcn_layer(tape: ad.Tape, h: ad.Var, a, theta: ad.Var, steps: int,
               act: str = "relu") -> ad.Var:
    """Diffusion convolution ``act(sum_m (t_m1 (D_O^-1 A)^m + t_m2 (D_I^-1 A^T)^m) H)``."""
    if theta.shape != (steps, 2):
        raise DimensionError(f"theta must be {steps}x2, got {theta.shape}")
    a = np.asarray(a, dtype=float)
    fwd, bwd = tape.const(random_walk(a)), tape.const(random_walk(a.T))
    hf, hb = h, h
    out = None
    for m in range(steps):
        if m:
            hf, hb = fwd @ hf, bwd @ hb
        term = hf * _theta_entry(tape, theta, m, 0) + hb * _theta_entry(tape, theta, m, 1)
        out = term if out is None else out + term
    return ad.activation(act)(out)


def pool_assignment(x: ad.Var, w1: ad.Var, w2: ad.Var) -> ad.Var:
    return ad.row_softmax(ad.tanh(x @ w1) @ w2)


def pool(x: ad.Var, a: ad.Var, s: ad.Var):
    st = s.T
    return st @ x, ad.row_softmax(st @ a @ s)


def unpool(x_up: ad.Var, residual: Optional[ad.Var], s: ad.Var) -> ad.Var:
    return s @ (x_up if residual is None else x_up + residual)


def gdn_residual(tape: ad.Tape, x: ad.Var, lap, w3: ad.Var, order: int,
                 act: str = "identity") -> ad.Var:
    """``act((I + sum_m lap^m/m!) X W3)``; ``lap`` may be a node or an array."""
    lap = lap if isinstance(lap, ad.Var) else tape.const(lap)
    acc, term = x, x
    for m in range(1, order + 1):
        term = (lap @ term) * (1.0 / m)
        acc = acc + term
    return ad.activation(act)(acc @ w3)


# -- numpy conveniences for the single-operation contracts -------------------


def assignment_matrix(x, w1, w2) -> np.ndarray:
    tape = ad.Tape()
    return pool_assignment(tape.const(x), tape.const(w1), tape.const(w2)).value


def pool_np(x, a, s):
    tape = ad.Tape()
    xp, ap = pool(tape.const(x), tape.const(a), tape.const(s))
    return xp.value, ap.value


def unpool_np(x_up, residual, s) -> np.ndarray:
    tape = ad.Tape()
    r = None if residual is None else tape.const(residual)
    return unpool(tape.const(x_up), r, tape.const(s)).value


def gdn_residual_np(x, lap, w3, order: int, act: str = "identity") -> np.ndarray:
    tape = ad.Tape()
    return gdn_residual(tape, tape.const(x), lap, tape.const(w3), order, act).value


def dgcn_layer_np(h, a, theta, steps: int, act: str = "relu") -> np.ndarray:
    tape = ad.Tape()
    return dgcn_layer(tape, tape.const(h), a, tape.const(theta), steps, act).value


# -- model -----------------------------------------------------------------


def init_params(n: int, d: int, config: GlpnConfig, rng: Optional[np.random.Generator] = None) -> GlpnParams:
    """Glorot-uniform weights; ``theta_final`` starts at the identity filter."""
    rng = make_rng(config.seed) if rng is None else rng
    sizes = (n,) + config.cluster_sizes(n)
    w = {}
    for l in range(config.levels):
        w[f"w1_{l}"] = training.glorot(rng, d, config.hidden)
        w[f"w2_{l}"] = training.glorot(rng, config.hidden, sizes[l + 1])
        w[f"w3_{l}"] = np.eye(d) + training.glorot(rng, d, d) * 0.1
    if config.use_pyramid:
        w["w_up"] = np.zeros((d, d))
    if config.final_dgcn:
        theta = np.zeros((config.dgcn_steps, 2))
        theta[0] = 0.5
        w["theta_final"] = theta
    return GlpnParams(w, {"scheme": "glorot-uniform", "seed": config.seed,
                          "w3": "identity + 0.1 * glorot", "theta_final": "identity filter"})


def analysis_params(n: int, d: int, config: GlpnConfig, rng=None) -> GlpnParams:
    """Random pooling weights, ``W3 = I`` and no final layer."""
    params = init_params(n, d, config, rng)
    for l in range(config.levels):
        params.weights[f"w3_{l}"] = np.eye(d)
    if config.use_pyramid:
        params.weights["w_up"] = np.eye(d)
    params.weights.pop("theta_final", None)
    return params


class _Context:
    """Per-graph constants reused across epochs."""

    def __init__(self, a, config: GlpnConfig):
        self.a = np.asarray(a, dtype=float)
        self.lap = augmented_laplacian(self.a)
        self.filter0 = maclaurin_filter(self.lap, config.maclaurin_order)
        self.config = config


def _forward(tape: ad.Tape, pv: Dict[str, ad.Var], x_d, ctx: _Context,
             trace: Optional[dict] = None) -> ad.Var:
    cfg = ctx.config
    x0 = x_d if isinstance(x_d, ad.Var) else tape.const(x_d)
    xs, assigns, laps = [x0], [], [None]
    a_cur = tape.const(ctx.a)
    if cfg.use_pyramid:
        for l in range(cfg.levels):
            s = pool_assignment(xs[l], pv[f"w1_{l}"], pv[f"w2_{l}"])
            xp, ap = pool(xs[l], a_cur, s)
            assigns.append(s)
            xs.append(xp)
            a_cur = ap
            laps.append(tape.const(np.eye(ap.shape[0])) - ap)

    residuals: List[Optional[ad.Var]] = [None] * (cfg.levels + 1)
    if cfg.use_residual:
        # level-0 filter is a fixed matrix, so apply it in one product
        residuals[0] = ad.activation(cfg.residual_activation)(
            (tape.const(ctx.filter0) @ x0) @ pv["w3_0"])
        for l in range(1, cfg.levels if cfg.use_pyramid else 1):
            residuals[l] = gdn_residual(tape, xs[l], laps[l], pv[f"w3_{l}"],
                                        cfg.maclaurin_order, cfg.residual_activation)

    out = None
    if cfg.use_pyramid:
        up = xs[cfg.levels]
        for l in reversed(range(cfg.levels)):
            up = unpool(up, residuals[l + 1], assigns[l])
        out = up @ pv["w_up"]
        out = out * cfg.alpha if cfg.alpha != 1.0 else out
    if residuals[0] is not None:
        out = residuals[0] if out is None else out + residuals[0]
    if cfg.final_dgcn:
        out = dgcn_layer(tape, out, ctx.a, pv["theta_final"], cfg.dgcn_steps, act="identity")
    if trace is not None:
        trace.update(assignments=[s.value for s in assigns], pooled=[x.value for x in xs],
                     residuals=[r.value if r is not None else None for r in residuals])
    return out


def forward(graph_or_adjacency, x_d, params: GlpnParams, config: GlpnConfig,
            trace: Optional[dict] = None) -> np.ndarray:
    """Refined features for a complete draft ``x_d``."""
    a = graph_or_adjacency.adjacency if isinstance(graph_or_adjacency, Graph) else graph_or_adjacency
    x_d = np.asarray(x_d, dtype=float)
    if x_d.shape[0] != np.shape(a)[0]:
        raise DimensionError("draft rows must match the node count")
    ctx = _Context(a, config)
    tape = ad.Tape()
    pv = {k: tape.const(v) for k, v in params.weights.items()}
    return _forward(tape, pv, x_d, ctx, trace).value


def objective(a, x_in, target, loss_mask, params: GlpnParams, config: GlpnConfig):
    """Training loss (masked MSE of the forward pass) and its gradient with
    respect to every weight, as ``(loss, {name: gradient})``."""
    ctx = _Context(a, config)
    tape = ad.Tape()
    pv = {k: tape.param(v, name=k) for k, v in params.weights.items()}
    out = _forward(tape, pv, np.asarray(x_in, dtype=float), ctx)
    loss_node = training.masked_mse(tape, out, np.asarray(target, dtype=float),
                                    np.asarray(loss_mask, dtype=float))
    return float(loss_node.value[0, 0]), ad.backward(loss_node)


def closed_form_analysis(a, x_d, s, alpha: float, order: int = 1) -> np.ndarray:
    """``P X + alpha S S^T X`` with ``P`` the truncated Maclaurin filter."""
    lap = augmented_laplacian(a)
    return maclaurin_filter(lap, order) @ x_d + alpha * (s @ (s.T @ x_d))


def loss(x_hat, x, train_mask) -> float:
    """Mean squared error over the entries selected by ``train_mask``."""
    x_hat = np.asarray(x_hat, dtype=float)
    m = np.asarray(train_mask, dtype=float)
    if x_hat.shape != np.shape(x) or m.shape != x_hat.shape:
        raise DimensionError("loss operands must share one shape")
    count = m.sum()
    if count == 0:
        raise ContractError("loss mask selects no entries")
    r = np.where(m == 1, x_hat - np.asarray(x, dtype=float), 0.0)
    return float(np.sum(r * r) / count)


# -- draft stage -----------------------------------------------------------


def _dgcn_input(x_obs, m, a) -> np.ndarray:
    return np.hstack([baselines.nearest_fill(x_obs, m, a), m])


def _train_dgcn_drafter(graph: Graph, train_mask, config: GlpnConfig, rng):
    """One diffusion layer over ``[nearest fill | mask]`` and a linear readout.

    Both start at the identity map on the filled features, so an untrained
    drafter returns the nearest-hop fill.
    """
    d = graph.d
    theta = np.zeros((config.dgcn_steps, 2))
    theta[0] = 0.5
    params = {"theta_draft": theta,
              "w_draft": np.vstack([np.eye(d), np.zeros((d, d))])}
    a = graph.adjacency

    def fwd(tape, pv, x_in):
        h = dgcn_layer(tape, tape.const(x_in), a, pv["theta_draft"], config.dgcn_steps)
        return h @ pv["w_draft"]

    def fill(x, m):
        return _dgcn_input(x, m, a)

    x_obs = graph.observed()
    bank = training.draft_bank(x_obs, train_mask, fill, config.bank_size, config.drop, rng)
    fitted = training.fit(fwd, params, x_obs, train_mask, bank, config.epochs, config.lr,
                          loss_on=config.loss_on)

    def drafter(x, m):
        out = training.predict(fwd, fitted.params, fill(x, m))
        return np.where(m == 1, x, out)

    return drafter


def _train_gcn_drafter(graph: Graph, train_mask, config: GlpnConfig, rng):
    params = baselines.init_gcn(graph.d, config.hidden, rng)
    prop = baselines.gcn_propagator(graph.adjacency)

    def fwd(tape, pv, x_in):
        return baselines.gcn_forward(tape, tape.const(prop), tape.const(x_in),
                                     [pv["gcn_w1"], pv["gcn_w2"]])

    x_obs = graph.observed()
    bank = training.draft_bank(x_obs, train_mask, baselines.mean_fill, config.bank_size,
                               config.drop, rng)
    fitted = training.fit(fwd, params, x_obs, train_mask, bank, config.epochs, config.lr,
                          loss_on=config.loss_on)

    def drafter(x, m):
        out = training.predict(fwd, fitted.params, baselines.mean_fill(x, m))
        return np.where(m == 1, x, out)

    return drafter


def make_drafter(graph: Graph, config: GlpnConfig, train_mask=None, rng=None):
    """A function ``(x_obs, mask) -> complete draft`` for ``config.draft``.

    Learned drafters (``dgcn``, ``gcn``) are trained here on ``train_mask``.
    """
    rng = make_rng(config.seed) if rng is None else rng
    train_mask = graph.mask if train_mask is None else train_mask
    kind = config.draft
    if kind == "mean":
        return baselines.mean_fill
    if kind == "knn":
        reach = baselines.hop_reach(graph.adjacency, config.knn_hops)
        return lambda x, m: baselines.knn_fill(x, m, reach)
    if kind == "soft":
        return lambda x, m: baselines.soft_impute(x, m, lam=config.soft_lambda).x_hat
    if kind == "dgcn":
        return _train_dgcn_drafter(graph, train_mask, config, rng)
    return _train_gcn_drafter(graph, train_mask, config, rng)


def draft_impute(graph: Graph, config: GlpnConfig) -> np.ndarray:
    """Complete draft with observed entries restored."""
    drafter = make_drafter(graph, config)
    x_obs = graph.observed()
    return baselines.restore_observed(drafter(x_obs, graph.mask), graph.features, graph.mask)


# -- training --------------------------------------------------------------


@dataclass
class TrainReport:
    params: GlpnParams
    curve: List[float]
    val_rmse: Optional[float]
    x_hat: np.ndarray
    draft: np.ndarray
    drafter: Optional[training.Drafter] = None
    train_mask: Optional[np.ndarray] = None


def prepare(graph: Graph, config: GlpnConfig):
    """Split the observed entries and build the drafter for ``config``.

    Returns ``(train_mask, val_mask, drafter, rng)``.  The refinement stage
    draws from its own stream, so sharing one preparation between variants
    does not change any of them.
    """
    rng = make_rng(config.seed)
    train_mask, val_mask = training.split_observed(graph.mask, config.train_fraction, rng)
    if not train_mask.any():
        raise ContractError("no observed entries to train on")
    drafter = make_drafter(graph, config, train_mask, rng)
    return train_mask, val_mask, drafter, rng


def train(graph: Graph, config: GlpnConfig, prepared=None) -> TrainReport:
    """Fit GLPN on the observed entries of ``graph``.

    Observed entries are split ``train_fraction`` / rest: the first part
    drives the loss (and any learned drafter), the rest is only used to
    report a validation RMSE.  The returned ``x_hat`` is built from all
    observed entries and agrees with them exactly.  ``prepared`` reuses the
    output of :func:`prepare` so several variants can share one draft.
    """
    train_mask, val_mask, drafter, _ = prepared if prepared is not None else prepare(graph, config)
    rng = make_rng([config.seed, 1])
    params = init_params(graph.n, graph.d, config, rng)
    ctx = _Context(graph.adjacency, config)
    x_obs = graph.observed()
    bank = training.draft_bank(x_obs, train_mask, drafter, config.bank_size, config.drop, rng)

    def fwd(tape, pv, x_in):
        return _forward(tape, pv, x_in, ctx)

    fitted = training.fit(fwd, params.weights, x_obs, train_mask, bank, config.epochs,
                          config.lr, loss_on=config.loss_on)
    params = GlpnParams(fitted.params, params.init)

    val_rmse = None
    if val_mask.any():
        pred = training.predict(fwd, params.weights, drafter(x_obs * train_mask, train_mask))
        r = np.where(val_mask == 1, pred - x_obs, 0.0)
        val_rmse = float(np.sqrt(np.sum(r * r) / val_mask.sum()))

    draft = drafter(x_obs, graph.mask)
    x_hat = training.predict(fwd, params.weights, draft)
    x_hat = baselines.restore_observed(x_hat, graph.features, graph.mask)
    return TrainReport(params, fitted.curve, val_rmse, x_hat, draft, drafter, train_mask)


# -- serialisation ---------------------------------------------------------


def save_params(path, params: GlpnParams, config: GlpnConfig) -> None:
    """JSON header (length-prefixed, uint64 LE) then raw float64 LE payload."""
    tensors, offset, chunks = [], 0, []
    for name in sorted(params.weights):
        arr = np.ascontiguousarray(params.weights[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"format": PARAMS_FORMAT, "version": PARAMS_VERSION,
                         "config": config.to_dict(), "init": params.init,
                         "tensors": tensors}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_params(path) -> Tuple[GlpnParams, GlpnConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise DataError("truncated parameter file")
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + hlen].decode())
    if header.get("format") != PARAMS_FORMAT or header.get("version") != PARAMS_VERSION:
        raise DataError("not a version-1 GLPN parameter file")
    payload = raw[8 + hlen:]
    weights = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        start = t["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        weights[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return GlpnParams(weights, header.get("init", {})), GlpnConfig.from_dict(header["config"])
