"""Stacked LSTM regressor in plain numpy.

Per layer and time step, with gate order ``[i, f, g, o]``::

    z = W (x * mx) + U (h_prev * mh) + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o)
    g = act(z_g)
    c = f * c_prev + i * g
    h = o * act(c)

``act`` is tanh or relu. ``mx`` and ``mh`` are inverted-dropout masks drawn
once per sequence and only while training. The top layer's last hidden
state feeds a dense scalar output. Batches are processed together; arrays
are ``(batch, time, width)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import ScalerParams, WindowedDataset, apply_scaler, inverse_scale_target
from ..errors import ConfigurationError, DimensionError, MissingInputError, ParseError

FORMAT = "toolwear-lstm"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Hyperparameters:
    n_layers: int = 2
    units_per_layer: tuple = (64, 64)
    activation: str = "tanh"
    dropout_rate: float = 0.0
    recurrent_dropout_rate: float = 0.0
    regularizer: str = "L2"
    reg_factor: float = 0.0
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    min_delta: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "units_per_layer", tuple(int(u) for u in self.units_per_layer))

    def validate(self) -> None:
        if not 1 <= self.n_layers <= 10:
            raise ConfigurationError(f"n_layers must be in [1, 10], got {self.n_layers}")
        if len(self.units_per_layer) != self.n_layers:
            raise ConfigurationError("units_per_layer needs one entry per layer")
        if any(not 16 <= u <= 128 for u in self.units_per_layer):
            raise ConfigurationError(f"units must be in [16, 128], got {self.units_per_layer}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigurationError(f"activation must be tanh or relu, got {self.activation!r}")
        for name in ("dropout_rate", "recurrent_dropout_rate"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise ConfigurationError(f"{name} must be in [0, 0.5]")
        if self.regularizer not in ("L1", "L2"):
            raise ConfigurationError(f"regularizer must be L1 or L2, got {self.regularizer!r}")
        if self.reg_factor < 0:
            raise ConfigurationError("reg_factor must be non-negative")
        if not 1e-4 <= self.learning_rate <= 1e-2:
            raise ConfigurationError(f"learning_rate must be in [1e-4, 1e-2], got {self.learning_rate}")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigurationError("max_epochs, patience and batch_size must be >= 1")
        if self.min_delta < 0:
            raise ConfigurationError("min_delta must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units_per_layer"] = list(self.units_per_layer)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown hyperparameter(s): {', '.join(sorted(extra))}")
        return cls(**d)


@dataclass
class LstmModel:
    hp: Hyperparameters
    input_dim: int
    params: dict  # name -> ndarray, see param_names()
    scaler: ScalerParams | None = None
    metadata: dict = field(default_factory=dict)
    version: int = 0  # bumped on every in-place parameter update

    @property
    def units(self) -> tuple:
        return self.hp.units_per_layer

    def layer(self, l: int):
        p = self.params
        return p[f"layer{l}.W"], p[f"layer{l}.U"], p[f"layer{l}.b"]

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict) -> None:
        for k, v in params.items():
            self.params[k][...] = v
        self.version += 1


def param_names(n_layers: int) -> list[str]:
    names = []
    for l in range(n_layers):
        names += [f"layer{l}.W", f"layer{l}.U", f"layer{l}.b"]
    return names + ["dense.w", "dense.b"]


def _orthogonal(rng, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_model(hp: Hyperparameters, input_dim: int = 6) -> LstmModel:
    """Glorot-uniform kernels, orthogonal recurrent matrices, forget bias 1."""
    hp.validate()
    if input_dim < 1:
        raise ConfigurationError("input_dim must be >= 1")
    rng = np.random.default_rng([hp.seed, 7])
    params = {}
    d = input_dim
    for l, h in enumerate(hp.units_per_layer):
        limit = np.sqrt(6.0 / (d + 4 * h))
        params[f"layer{l}.W"] = rng.uniform(-limit, limit, size=(4 * h, d))
        params[f"layer{l}.U"] = _orthogonal(rng, 4 * h, h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params[f"layer{l}.b"] = b
        d = h
    limit = np.sqrt(6.0 / (d + 1))
    params["dense.w"] = rng.uniform(-limit, limit, size=d)
    params["dense.b"] = np.zeros(1)
    return LstmModel(hp=hp, input_dim=input_dim, params=params)


# ---------------------------------------------------------------- math

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z, a, kind):
    """Derivative given the input ``z`` and output ``a``; relu'(0) is taken as 0."""
    return 1.0 - a * a if kind == "tanh" else (z > 0).astype(np.float64)


@dataclass
class ForwardCache:
    model_version: int
    model_id: int
    x: np.ndarray
    layers: list
    h_top: np.ndarray


def draw_masks(model: LstmModel, batch: int, rng) -> list:
    """Inverted-dropout masks per layer: ``(input mask, recurrent mask)``, None when off."""
    hp = model.hp
    masks = []
    d = model.input_dim
    for h in model.units:
        mx = mh = None
        if hp.dropout_rate > 0:
            keep = 1.0 - hp.dropout_rate
            mx = (rng.random((batch, d)) < keep) / keep
        if hp.recurrent_dropout_rate > 0:
            keep = 1.0 - hp.recurrent_dropout_rate
            mh = (rng.random((batch, h)) < keep) / keep
        masks.append((mx, mh))
        d = h
    return masks


def forward_batch(model: LstmModel, x: np.ndarray, training: bool = False, rng=None,
                  masks=None):
    """Predictions for a ``(batch, timestep, features)`` array plus the backprop cache.

    Internally arrays are time-major ``(T, B, width)`` so per-step slices are contiguous.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != model.input_dim:
        raise DimensionError(f"expected (batch, timestep, {model.input_dim}) input, got {x.shape}")
    B, T, _ = x.shape
    kind = model.hp.activation
    if training and masks is None:
        masks = draw_masks(model, B, rng if rng is not None else np.random.default_rng())
    if not training:
        masks = [(None, None)] * len(model.units)

    layers = []
    inp = np.ascontiguousarray(x.transpose(1, 0, 2))
    for l, H in enumerate(model.units):
        W, U, b = model.layer(l)
        mx, mh = masks[l]
        x_in = inp * mx if mx is not None else inp
        zx = x_in @ W.T + b
        UT = U.T
        gates = np.empty((T, B, 4 * H))
        Zg = np.empty((T, B, H)) if kind == "relu" else None
        C = np.empty((T, B, H))
        AC = np.empty((T, B, H))
        Hs = np.empty((T, B, H))
        Hm_prev = np.empty((T, B, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            hm = h * mh if mh is not None else h
            Hm_prev[t] = hm
            z = zx[t] + hm @ UT
            gt = gates[t]
            gt[:] = _sigmoid(z)
            if kind == "relu":
                Zg[t] = z[:, 2 * H:3 * H]
                gt[:, 2 * H:3 * H] = np.maximum(z[:, 2 * H:3 * H], 0.0)
            else:
                gt[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            c = gt[:, H:2 * H] * c + gt[:, :H] * gt[:, 2 * H:3 * H]
            ac = _act(c, kind)
            h = gt[:, 3 * H:] * ac
            C[t], AC[t], Hs[t] = c, ac, h
        layers.append(dict(x_in=x_in, Zg=Zg, gates=gates, C=C, AC=AC, H=Hs, Hm_prev=Hm_prev,
                           mx=mx, mh=mh))
        inp = Hs
    h_top = inp[-1]
    pred = h_top @ model.params["dense.w"] + model.params["dense.b"][0]
    return pred, ForwardCache(model.version, id(model), x, layers, h_top)


def forward(model: LstmModel, window: np.ndarray, training: bool = False, dropout_seed: int = 0):
    """Single ``(timestep, features)`` window -> ``(prediction, cache)``."""
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionError(f"expected a (timestep, features) window, got shape {w.shape}")
    rng = np.random.default_rng(dropout_seed) if training else None
    pred, cache = forward_batch(model, w[None], training=training, rng=rng)
    return float(pred[0]), cache


def regularization(model: LstmModel) -> float:
    hp = model.hp
    if hp.reg_factor == 0:
        return 0.0
    total = 0.0
    for l in range(len(model.units)):
        W = model.params[f"layer{l}.W"]
        total += np.abs(W).sum() if hp.regularizer == "L1" else (W * W).sum()
    return float(hp.reg_factor * total)


def mae(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.size == 0:
        raise DimensionError(f"predictions {p.shape} and targets {y.shape} must match and be non-empty")
    return float(np.mean(np.abs(p - y)))


def loss(predictions, targets, model: LstmModel) -> float:
    """Mean absolute error plus the kernel regularization penalty."""
    return mae(predictions, targets) + regularization(model)


def backward(model: LstmModel, targets, cache: ForwardCache, predictions=None) -> dict:
    """Gradients of :func:`loss` for the batch held in ``cache`` (BPTT).

    The MAE subgradient at a zero residual is 0.
    """
    if cache.model_version != model.version or cache.model_id != id(model):
        raise RuntimeError("stale forward cache: model parameters changed since the forward pass")
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if predictions is None:
        predictions = cache.h_top @ model.params["dense.w"] + model.params["dense.b"][0]
    B = y.size
    if predictions.shape != (B,):
        raise DimensionError("targets do not match the cached batch")
    kind = model.hp.activation
    grads = {}
    dy = np.sign(predictions - y) / B
    grads["dense.w"] = cache.h_top.T @ dy
    grads["dense.b"] = np.array([dy.sum()])

    n_layers = len(model.units)
    T = cache.x.shape[1]
    dH = np.zeros_like(cache.layers[-1]["H"])
    dH[-1] = np.outer(dy, model.params["dense.w"])
    for l in reversed(range(n_layers)):
        W, U, b = model.layer(l)
        H = model.units[l]
        st = cache.layers[l]
        gates, C, AC = st["gates"], st["C"], st["AC"]
        mh = st["mh"]
        gi, gf = gates[..., :H], gates[..., H:2 * H]
        gg, go = gates[..., 2 * H:3 * H], gates[..., 3 * H:]
        # step-independent factors, so the recurrence below only carries dh and dc
        dc_from_h = go * _act_grad(C, AC, kind)
        c_prev = np.concatenate([np.zeros((1, B, H)), C[:-1]])
        g_grad = (1.0 - gg * gg) if kind == "tanh" else (st["Zg"] > 0).astype(np.float64)
        dz_dc = np.stack([gg * gi * (1.0 - gi), c_prev * gf * (1.0 - gf), gi * g_grad], axis=2)
        dz_dh = AC * go * (1.0 - go)
        dZ = np.empty((T, B, 4, H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            dh = dH[t] + dh_next
            dc = dh * dc_from_h[t] + dc_next
            dz = dZ[t]
            np.multiply(dc[:, None, :], dz_dc[t], out=dz[:, :3])
            np.multiply(dh, dz_dh[t], out=dz[:, 3])
            dc_next = dc * gf[t]
            dh_next = dz.reshape(B, 4 * H) @ U
            if mh is not None:
                dh_next *= mh
        dZ2 = dZ.reshape(T * B, 4 * H)
        grads[f"layer{l}.W"] = dZ2.T @ st["x_in"].reshape(T * B, -1)
        grads[f"layer{l}.U"] = dZ2.T @ st["Hm_prev"].reshape(T * B, H)
        grads[f"layer{l}.b"] = dZ2.sum(axis=0)
        hp = model.hp
        if hp.reg_factor:
            reg = np.sign(W) if hp.regularizer == "L1" else 2.0 * W
            grads[f"layer{l}.W"] += hp.reg_factor * reg
        if l > 0:
            dH = (dZ2 @ W).reshape(T, B, -1)
            if st["mx"] is not None:
                dH *= st["mx"]
    return grads


def loss_and_grads(model: LstmModel, x, y, training: bool = False, rng=None):
    pred, cache = forward_batch(model, x, training=training, rng=rng)
    return loss(pred, y, model), backward(model, y, cache, pred), pred


# ------------------------------------------------------------- inference

def predict_scaled(model: LstmModel, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[0] == 0:
        return np.empty(0)
    out = [forward_batch(model, x[i:i + batch_size])[0] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def predict(model: LstmModel, ds: WindowedDataset) -> np.ndarray:
    """Wear predictions in µm. Unscaled datasets are scaled with the model's scaler first."""
    if model.scaler is None:
        raise ConfigurationError("model has no scaler attached; cannot map predictions to µm")
    if len(ds) == 0:
        return np.empty(0)
    if not ds.scaled:
        ds = apply_scaler(ds, model.scaler)
    return inverse_scale_target(predict_scaled(model, ds.inputs), model.scaler)


# ---------------------------------------------------------- serialization

def model_to_dict(model: LstmModel) -> dict:
    layers = []
    for l in range(len(model.units)):
        W, U, b = model.layer(l)
        layers.append({"W": W.tolist(), "U": U.tolist(), "b": b.tolist()})
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "gate_order": ["i", "f", "g", "o"],
        "input_dim": model.input_dim,
        "hyperparameters": model.hp.to_dict(),
        "layers": layers,
        "dense": {"w": model.params["dense.w"].tolist(), "b": float(model.params["dense.b"][0])},
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "metadata": model.metadata,
    }


def model_from_dict(doc: dict) -> LstmModel:
    if doc.get("format") != FORMAT or "version" not in doc:
        raise ParseError("not a toolwear LSTM model document")
    if doc["version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported model version {doc['version']}")
    hp = Hyperparameters.from_dict(doc["hyperparameters"])
    params = {}
    for l, layer in enumerate(doc["layers"]):
        params[f"layer{l}.W"] = np.array(layer["W"], dtype=np.float64)
        params[f"layer{l}.U"] = np.array(layer["U"], dtype=np.float64)
        params[f"layer{l}.b"] = np.array(layer["b"], dtype=np.float64)
    params["dense.w"] = np.array(doc["dense"]["w"], dtype=np.float64)
    params["dense.b"] = np.array([doc["dense"]["b"]], dtype=np.float64)
    scaler = ScalerParams.from_dict(doc["scaler"]) if doc.get("scaler") else None
    model = LstmModel(hp=hp, input_dim=int(doc["input_dim"]), params=params, scaler=scaler,
                      metadata=dict(doc.get("metadata", {})))
    d = model.input_dim
    for l, h in enumerate(hp.units_per_layer):
        if params[f"layer{l}.W"].shape != (4 * h, d) or params[f"layer{l}.U"].shape != (4 * h, h):
            raise ParseError(f"layer {l} weight shapes inconsistent with hyperparameters")
        d = h
    return model


def save_model(model: LstmModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n")
    return path


def load_model(path) -> LstmModel:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path, line=exc.lineno) from None
    return model_from_dict(doc)
