"""Two-branch recurrent forecaster with hand-written backpropagation.

Shapes follow a batch-first convention: sequences are ``(batch, time,
features)``. Gates inside a layer's stacked weight matrices are ordered
input, forget, output, candidate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, DataError

GATES = ("i", "f", "o", "C")
VARIANTS = ("FULL", "LONLY", "RDENSE")


@dataclass(frozen=True)
class ModelConfig:
    a: int = 52
    b: int = 5
    season_length: int = 52
    K: int = 1
    k_l: int = 2
    k_r: int = 1
    H_hidden: int = 128
    H: int = 256
    mu: float = 0.1
    lam: float = 0.1
    dropout_rate: float = 0.2
    variant: str = "FULL"
    lr: float = 1e-3
    max_epochs: int = 300
    patience: int = 50
    batch_size: int = 32

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.a < 1:
            raise ConfigError("a must be >= 1")
        if self.b < 0 or (self.b == 0 and self.variant != "LONLY"):
            raise ConfigError("b must be >= 1 unless variant is LONLY")
        if self.mu < 0 or self.lam < 0:
            raise ConfigError("mu and lambda must be nonnegative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 0 or self.batch_size < 1:
            raise ConfigError("patience and batch_size must be >= 1, max_epochs >= 0")
        if self.K < 1 or self.k_l < 1 or self.H_hidden < 1 or self.H < 1 or self.season_length < 1:
            raise ConfigError("K, k_l, H_hidden, H and season_length must be >= 1")
        if self.variant == "FULL" and self.k_r < 1:
            raise ConfigError("FULL variant needs k_r >= 1")

    @property
    def b_effective(self) -> int:
        return 0 if self.variant == "LONLY" else self.b

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- LSTM cell and layer ---------------------------------------------------

def cell_forward(x, h_prev, c_prev, W, U, b):
    """One cell step. ``W``: (4H, D), ``U``: (4H, H), ``b``: (4H,).

    The output is ``h = o * c`` with no squashing of the cell state.
    Returns ``(h, c, gates)`` where gates holds ``(i, f, o, C~)``.
    """
    Hn = U.shape[1]
    z = x @ W.T + h_prev @ U.T + b
    i = sigmoid(z[..., :Hn])
    f = sigmoid(z[..., Hn:2 * Hn])
    o = sigmoid(z[..., 2 * Hn:3 * Hn])
    g = np.tanh(z[..., 3 * Hn:])
    c = f * c_prev + i * g
    h = o * c
    return h, c, (i, f, o, g)


def lstm_forward(X, W, U, b):
    """Run a layer over ``X`` (B, T, D) from zero state; returns outputs (B, T, H) and a cache."""
    B, T, _ = X.shape
    Hn = U.shape[1]
    h = np.zeros((B, Hn))
    c = np.zeros((B, Hn))
    hs = np.empty((B, T, Hn))
    cs = np.empty((B, T + 1, Hn))
    cs[:, 0] = 0.0
    gates = []
    for t in range(T):
        h, c, gt = cell_forward(X[:, t], h, c, W, U, b)
        hs[:, t] = h
        cs[:, t + 1] = c
        gates.append(gt)
    return hs, (X, hs, cs, gates, W, U)


def lstm_backward(dH, cache):
    """Backprop through a layer. ``dH`` (B, T, H) is the loss gradient w.r.t. each output."""
    X, hs, cs, gates, W, U = cache
    B, T, Hn = hs.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(W.shape[0])
    dX = np.empty_like(X)
    dh_next = np.zeros((B, Hn))
    dc_next = np.zeros((B, Hn))
    for t in range(T - 1, -1, -1):
        i, f, o, g = gates[t]
        c = cs[:, t + 1]
        c_prev = cs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, Hn))
        dh = dH[:, t] + dh_next
        do = dh * c
        dc = dh * o + dc_next
        dz = np.concatenate([dc * g * i * (1 - i),
                             dc * c_prev * f * (1 - f),
                             do * o * (1 - o),
                             dc * i * (1 - g * g)], axis=1)
        dW += dz.T @ X[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ W
        dh_next = dz @ U
        dc_next = dc * f
    return dX, dW, dU, db


# --- model -----------------------------------------------------------------

class ForecastModel:
    """Weights, configuration and normalisation scales.

    ``params`` maps names to arrays:

    * ``left.{k}.W/U/b`` and ``right.{k}.W/U/b``: recurrent layers;
    * ``left.dense.w/b`` and ``right.dense.w/b``: branch dense layers;
    * ``merge.w/b``: output layer to ``K + 1`` values.

    ``scales`` has one positive entry per output column; column 0 also
    scales the (state-level) inputs.
    """

    def __init__(self, config: ModelConfig, params: dict, scales=None):
        self.config = config
        self.params = params
        self.scales = np.ones(config.K + 1) if scales is None else np.asarray(scales, dtype=float)
        if self.scales.shape != (config.K + 1,) or np.any(self.scales <= 0):
            raise ConfigError("scales must be K+1 positive numbers")

    def copy(self) -> "ForecastModel":
        return ForecastModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.scales.copy())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        h.update(self.scales.tobytes())
        return h.hexdigest()

    def with_right_zeroed(self) -> "ForecastModel":
        m = self.copy()
        for k in m.params:
            if k.startswith("right."):
                m.params[k][...] = 0.0
        return m

    def normalize_inputs(self, x):
        return np.asarray(x, dtype=float) / self.scales[0]

    def normalize_targets(self, z):
        return np.asarray(z, dtype=float) / self.scales

    def denormalize_targets(self, z):
        return np.asarray(z, dtype=float) * self.scales


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def _init_lstm(rng, prefix, layers, d_in, Hn, params):
    for k in range(layers):
        d = d_in if k == 0 else Hn
        bound = 1.0 / np.sqrt(Hn)
        params[f"{prefix}.{k}.W"] = _uniform(rng, (4 * Hn, d), bound)
        params[f"{prefix}.{k}.U"] = _uniform(rng, (4 * Hn, Hn), bound)
        bias = np.zeros(4 * Hn)
        bias[Hn:2 * Hn] = 1.0  # forget gate starts open
        params[f"{prefix}.{k}.b"] = bias


def _init_dense(rng, prefix, d_in, d_out, params):
    bound = np.sqrt(6.0 / (d_in + d_out))
    params[f"{prefix}.w"] = _uniform(rng, (d_out, d_in), bound)
    params[f"{prefix}.b"] = np.zeros(d_out)


def init_model(config: ModelConfig, seed: int = 0, scales=None) -> ForecastModel:
    """Random initial weights; each branch draws from its own stream."""
    params: dict = {}
    rl = rngmod.make_rng(seed, rngmod.INIT, 0)
    _init_lstm(rl, "left", config.k_l, 1, config.H_hidden, params)
    _init_dense(rl, "left.dense", config.H_hidden, config.H, params)
    rr = rngmod.make_rng(seed, rngmod.INIT, 1)
    if config.variant == "FULL":
        _init_lstm(rr, "right", config.k_r, 1, config.H_hidden, params)
        _init_dense(rr, "right.dense", config.H_hidden, config.H, params)
    elif config.variant == "RDENSE":
        _init_dense(rr, "right.dense", config.b, config.H, params)
    rm = rngmod.make_rng(seed, rngmod.INIT, 2)
    _init_dense(rm, "merge", config.H, config.K + 1, params)
    return ForecastModel(config, params, scales)


def dropout_masks(rate: float, shape, rng: np.random.Generator, count: int):
    if rate <= 0:
        return [None] * count
    keep = 1.0 - rate
    return [(rng.random(shape) < keep) / keep for _ in range(count)]


def forward_batch(model: ForecastModel, x1, x2, masks=(None, None)):
    """Forward pass on normalised inputs ``x1`` (B, a) and ``x2`` (B, b).

    ``masks`` are optional dropout multipliers for the left and right
    branch dense outputs. Returns ``(z_hat, cache)``.
    """
    cfg, p = model.config, model.params
    x1 = np.atleast_2d(x1)
    B = x1.shape[0]
    h = x1[:, :, None]
    left_caches = []
    for k in range(cfg.k_l):
        h, cache = lstm_forward(h, p[f"left.{k}.W"], p[f"left.{k}.U"], p[f"left.{k}.b"])
        left_caches.append(cache)
    h_left = h[:, -1]
    O_l = h_left @ p["left.dense.w"].T + p["left.dense.b"]
    if masks[0] is not None:
        O_l = O_l * masks[0]

    right_caches = []
    h_right = None
    x2 = np.asarray(x2, dtype=float).reshape(B, -1)
    if cfg.variant == "FULL":
        h = x2[:, :, None]
        for k in range(cfg.k_r):
            h, cache = lstm_forward(h, p[f"right.{k}.W"], p[f"right.{k}.U"], p[f"right.{k}.b"])
            right_caches.append(cache)
        h_right = h[:, -1]
        O_r = h_right @ p["right.dense.w"].T + p["right.dense.b"]
    elif cfg.variant == "RDENSE":
        O_r = x2 @ p["right.dense.w"].T + p["right.dense.b"]
    else:
        O_r = np.zeros_like(O_l)
    if masks[1] is not None and cfg.variant != "LONLY":
        O_r = O_r * masks[1]

    merged = O_l + O_r
    z_hat = merged @ p["merge.w"].T + p["merge.b"]
    cache = (x1, x2, left_caches, h_left, right_caches, h_right, merged, masks)
    return z_hat, cache


def backward_batch(model: ForecastModel, dz, cache) -> dict:
    """Gradients of the loss w.r.t. every parameter given ``dz = dL/dz_hat``."""
    cfg, p = model.config, model.params
    x1, x2, left_caches, h_left, right_caches, h_right, merged, masks = cache
    g = {}
    g["merge.w"] = dz.T @ merged
    g["merge.b"] = dz.sum(axis=0)
    d_merged = dz @ p["merge.w"]

    dO_l = d_merged if masks[0] is None else d_merged * masks[0]
    g["left.dense.w"] = dO_l.T @ h_left
    g["left.dense.b"] = dO_l.sum(axis=0)
    dh_last = dO_l @ p["left.dense.w"]
    B, T = x1.shape
    dH = np.zeros((B, T, cfg.H_hidden))
    dH[:, -1] = dh_last
    for k in range(cfg.k_l - 1, -1, -1):
        dH, g[f"left.{k}.W"], g[f"left.{k}.U"], g[f"left.{k}.b"] = lstm_backward(dH, left_caches[k])

    if cfg.variant != "LONLY":
        dO_r = d_merged if masks[1] is None else d_merged * masks[1]
        if cfg.variant == "RDENSE":
            g["right.dense.w"] = dO_r.T @ x2
            g["right.dense.b"] = dO_r.sum(axis=0)
        else:
            g["right.dense.w"] = dO_r.T @ h_right
            g["right.dense.b"] = dO_r.sum(axis=0)
            dH = np.zeros((B, x2.shape[1], cfg.H_hidden))
            dH[:, -1] = dO_r @ p["right.dense.w"]
            for k in range(cfg.k_r - 1, -1, -1):
                dH, g[f"right.{k}.W"], g[f"right.{k}.U"], g[f"right.{k}.b"] = lstm_backward(dH, right_caches[k])
    return g


def forward(model: ForecastModel, x1, x2, dropout_active: bool = False, rng=None) -> np.ndarray:
    """Predict one week ahead from raw (unnormalised) windows; returns K+1 raw values."""
    cfg = model.config
    x1 = np.asarray(x1, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    if x1.shape[1] != cfg.a or x2.shape[1] != cfg.b_effective:
        raise DataError(f"expected windows of length a={cfg.a}, b={cfg.b_effective}; "
                        f"got {x1.shape[1]}, {x2.shape[1]}")
    masks = (None, None)
    if dropout_active:
        if rng is None:
            raise ConfigError("dropout needs an rng")
        masks = tuple(dropout_masks(cfg.dropout_rate, (1, cfg.H), rng, 2))
    z, _ = forward_batch(model, model.normalize_inputs(x1), model.normalize_inputs(x2), masks)
    return model.denormalize_targets(z[0])


# --- loss ------------------------------------------------------------------

def _spatial_coeffs(K: int, scales=None) -> np.ndarray:
    """Coefficients c with ``c . z_hat`` = state minus sum of counties, in state units."""
    if scales is None:
        return np.concatenate([[1.0], -np.ones(K)])
    scales = np.asarray(scales, dtype=float)
    return np.concatenate([[1.0], -scales[1:] / scales[0]])


def spatial_gap(z_hat, K: int, scales=None):
    return np.abs(np.asarray(z_hat, dtype=float) @ _spatial_coeffs(K, scales))


def negativity(z_hat, K: int):
    z_hat = np.asarray(z_hat, dtype=float)
    return np.abs(np.maximum(-z_hat, 0.0).sum(axis=-1) / (K + 1))


def loss(z, z_hat, mu: float, lam: float, K: int, scales=None) -> float:
    """Squared error plus spatial and non-negativity penalties for one output vector.

    With ``scales`` given, ``z`` and ``z_hat`` are normalised values and the
    spatial gap is measured in state units.
    """
    z = np.asarray(z, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    sq = float(np.sum((z - z_hat) ** 2))
    return sq + mu * float(spatial_gap(z_hat, K, scales)) + lam * float(negativity(z_hat, K))


def batch_loss_grad(z, z_hat, mu, lam, K, scales=None):
    """Mean per-sample loss over a batch and its gradient w.r.t. ``z_hat``."""
    B = z.shape[0]
    diff = z_hat - z
    c = _spatial_coeffs(K, scales)
    gap = z_hat @ c
    per = (diff ** 2).sum(axis=1) + mu * np.abs(gap) + lam * np.maximum(-z_hat, 0.0).sum(axis=1) / (K + 1)
    dz = 2.0 * diff + mu * np.sign(gap)[:, None] * c[None, :] - lam * (z_hat < 0) / (K + 1)
    return float(per.mean()), dz / B


def loss_and_grad(model: ForecastModel, x1, x2, z, masks=(None, None)):
    """Training objective on a normalised batch and its parameter gradients."""
    cfg = model.config
    z_hat, cache = forward_batch(model, x1, x2, masks)
    value, dz = batch_loss_grad(z, z_hat, cfg.mu, cfg.lam, cfg.K, model.scales)
    return value, backward_batch(model, dz, cache)


# --- persistence -----------------------------------------------------------

FORMAT = "epiforge-model/1"


def model_to_dict(model: ForecastModel) -> dict:
    return {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "scales": [float(s) for s in model.scales],
        "tensors": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                    for k, v in sorted(model.params.items())},
    }


def model_from_dict(doc: dict) -> ForecastModel:
    if doc.get("format") != FORMAT:
        raise DataError(f"unsupported model format {doc.get('format')!r}")
    cfg = ModelConfig.from_dict(doc["config"])
    params = {k: np.array(t["data"], dtype=np.float64).reshape(t["shape"]) for k, t in doc["tensors"].items()}
    return ForecastModel(cfg, params, doc["scales"])


def save_model(model: ForecastModel, path: str, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc["meta"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path: str) -> ForecastModel:
    try:
        with open(path) as fh:
            return model_from_dict(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
