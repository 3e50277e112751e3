"""Feedforward regression networks trained with Nadam.

Architectures are dense stacks of 1-5 hidden layers. The first hidden layer
has ``base_width`` units; with taper enabled each following layer has
``max(1, ceil(previous * taper_size))`` units, otherwise the width is
constant. The output is a single linear unit. Six hidden activations are
supported (relu, elu, leaky_relu, prelu, tanh, sigmoid); PReLU carries one
learnable slope per hidden layer, initialized at 0.25 and trained like any
other parameter.

Dropout is inverted: at train time activations are masked with keep
probability 1 - rate and rescaled by 1/(1 - rate), so evaluation needs no
correction. Backpropagation treats the drawn mask as a constant, which is
what the finite-difference tests check.

Everything is float64. A single generator seeded from config.seed drives
initialization, batch shuffling and dropout masks in a fixed draw order
(per epoch: one permutation, then one keep-mask block per hidden layer
covering the whole shuffled epoch), so identical configs train
bit-identically.

Two implementations of the training math live here on purpose. The plain
numpy ``forward``/``backward``/``nadam_step`` are the readable reference —
the finite-difference oracle differentiates exactly what ``backward``
claims to. ``train_net`` itself runs compiled per-epoch kernels (the
search loop trains tens of thousands of these nets on small batches, where
interpreter overhead would dominate); the kernels repeat the reference
formulas operation for operation, and the test suite holds the two paths
together to float precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.typed import List as _TypedList

ACTIVATIONS = ("relu", "elu", "leaky_relu", "prelu", "tanh", "sigmoid")
ELU_ALPHA = 1.0
LEAKY_SLOPE = 0.01
PRELU_INIT = 0.25
NADAM_BETA1 = 0.9
NADAM_BETA2 = 0.999
NADAM_EPS = 1e-8
EARLY_STOP_PATIENCE = 20
EARLY_STOP_MIN_DELTA = 1e-4


class TrainingDivergedError(RuntimeError):
    """Training loss went non-finite; the trial counts as failed upstream."""


@dataclass(frozen=True)
class NetConfig:
    n_layers: int
    base_width: int
    taper: bool
    taper_size: float
    dropout_rate: float
    activation: str
    learning_rate: float
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0

    def hidden_widths(self) -> tuple[int, ...]:
        """First layer = base_width; tapered layers shrink, never below 1."""
        widths = [self.base_width]
        for _ in range(self.n_layers - 1):
            if self.taper:
                widths.append(max(1, math.ceil(widths[-1] * self.taper_size)))
            else:
                widths.append(widths[-1])
        return tuple(widths)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "base_width": self.base_width,
            "taper": self.taper,
            "taper_size": self.taper_size,
            "dropout_rate": self.dropout_rate,
            "activation": self.activation,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NetConfig":
        return cls(
            n_layers=int(payload["n_layers"]),
            base_width=int(payload["base_width"]),
            taper=bool(payload["taper"]),
            taper_size=float(payload["taper_size"]),
            dropout_rate=float(payload["dropout_rate"]),
            activation=str(payload["activation"]),
            learning_rate=float(payload["learning_rate"]),
            epochs=int(payload.get("epochs", 200)),
            batch_size=int(payload.get("batch_size", 16)),
            seed=int(payload.get("seed", 0)),
        )


@dataclass
class NetModel:
    """Weights/biases per layer (hidden layers then the linear output).

    ``y_center``/``y_scale`` map network output back to target units;
    training standardizes the target and records the transform here.
    """

    config: NetConfig
    n_features: int
    weights: list[np.ndarray] = field(repr=False, default_factory=list)
    biases: list[np.ndarray] = field(repr=False, default_factory=list)
    prelu_slopes: np.ndarray | None = field(repr=False, default=None)
    y_center: float = 0.0
    y_scale: float = 1.0
    loss_trace: tuple[float, ...] = ()
    provenance: object | None = None

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def params(self) -> list[np.ndarray]:
        """The trainable arrays themselves (updated in place by the optimizer)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        if self.prelu_slopes is not None:
            out.append(self.prelu_slopes)
        return out

    def predict(self, X) -> np.ndarray:
        return predict_net(self, X)

    def to_json_dict(self) -> dict:
        return {
            "family": "net",
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "prelu_slopes": (
                None if self.prelu_slopes is None else self.prelu_slopes.tolist()
            ),
            "y_center": self.y_center,
            "y_scale": self.y_scale,
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "NetModel":
        return cls(
            config=NetConfig.from_dict(payload["config"]),
            n_features=int(payload["n_features"]),
            weights=[np.asarray(w, dtype=np.float64) for w in payload["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in payload["biases"]],
            prelu_slopes=(
                None
                if payload.get("prelu_slopes") is None
                else np.asarray(payload["prelu_slopes"], dtype=np.float64)
            ),
            y_center=float(payload.get("y_center", 0.0)),
            y_scale=float(payload.get("y_scale", 1.0)),
            loss_trace=tuple(payload.get("loss_trace", ())),
        )


def build_net(config: NetConfig, n_features: int, rng=None) -> NetModel:
    """Glorot-uniform weights from the seeded generator, zero biases.

    Passing ``rng`` lets train_net share one stream between init and the
    training draws; standalone callers get a generator from config.seed.
    """
    if n_features < 1:
        raise ValueError("build_net needs at least one input feature")
    if config.activation not in ACTIVATIONS:
        raise ValueError(
            f"unknown activation {config.activation!r} "
            f"(expected one of: {', '.join(ACTIVATIONS)})"
        )
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dims = [n_features, *config.hidden_widths(), 1]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    slopes = (
        np.full(len(dims) - 2, PRELU_INIT)
        if config.activation == "prelu"
        else None
    )
    return NetModel(
        config=config, n_features=n_features,
        weights=weights, biases=biases, prelu_slopes=slopes,
    )


def _activate(z: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "relu":
        return np.where(z > 0.0, z, 0.0)
    if kind == "elu":
        return np.where(z > 0.0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if kind == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if kind == "prelu":
        return np.where(z > 0.0, z, slope * z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(z: np.ndarray, h: np.ndarray, kind: str, slope: float) -> np.ndarray:
    """dh/dz given pre-activation z and output h."""
    if kind == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    if kind == "elu":
        return np.where(z > 0.0, 1.0, h + ELU_ALPHA)  # d/dz a(e^z-1) = h + a
    if kind == "leaky_relu":
        return np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    if kind == "prelu":
        return np.where(z > 0.0, 1.0, slope)
    if kind == "tanh":
        return 1.0 - h * h
    if kind == "sigmoid":
        return h * (1.0 - h)
    raise ValueError(f"unknown activation {kind!r}")


def draw_dropout_masks(model: NetModel, n_rows: int, rng) -> list[np.ndarray]:
    """One boolean keep-mask per hidden layer; keep probability 1 - rate."""
    rate = model.config.dropout_rate
    widths = model.config.hidden_widths()
    return [rng.random((n_rows, w)) >= rate for w in widths]


def _forward_batch(model: NetModel, X: np.ndarray, masks=None):
    """Returns (pred (n,), caches). caches[k] = (a_in, z, h, dropped) per hidden layer."""
    kind = model.config.activation
    rate = model.config.dropout_rate
    slopes = model.prelu_slopes
    a = X
    caches = []
    for k in range(model.n_hidden):
        z = a @ model.weights[k] + model.biases[k]
        slope = float(slopes[k]) if slopes is not None else 0.0
        h = _activate(z, kind, slope)
        if masks is not None:
            dropped = h * (masks[k] / (1.0 - rate))
        else:
            dropped = h
        caches.append((a, z, h, dropped))
        a = dropped
    pred = (a @ model.weights[-1] + model.biases[-1])[:, 0]
    return pred, caches, a


def forward(model: NetModel, x, train_mode: bool = False, rng=None):
    """Network output for one sample (1-D x) or a batch (2-D x).

    Train mode draws fresh dropout masks from ``rng``; eval mode is
    deterministic and dropout-free.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} features, got {X.shape[1]}"
        )
    masks = None
    if train_mode:
        if rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")
        masks = draw_dropout_masks(model, X.shape[0], rng)
    pred, _, _ = _forward_batch(model, X, masks)
    return float(pred[0]) if single else pred


def mse_loss(y_hat, y) -> float:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y_hat.ndim != 1:
        raise ValueError("mse_loss expects two equal-length vectors")
    if y_hat.size == 0:
        raise ValueError("mse_loss needs at least one element")
    r = y_hat - y
    return float(np.mean(r * r))


@dataclass
class NetGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    prelu_slopes: np.ndarray | None = None

    def as_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        if self.prelu_slopes is not None:
            out.append(self.prelu_slopes)
        return out


def loss_with_masks(model: NetModel, X, y, masks=None) -> float:
    """Batch MSE under fixed dropout masks (None = no dropout).

    The finite-difference oracle evaluates this at perturbed parameters; it
    must be exactly the function backward differentiates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pred, _, _ = _forward_batch(model, X, masks)
    return mse_loss(pred, y)


def backward(model: NetModel, X, y, masks=None) -> tuple[NetGradients, float]:
    """Exact gradients of batch MSE w.r.t. every parameter.

    ``masks`` holds the dropout masks drawn for this batch (kept fixed here);
    None means a dropout-free pass. Returns (gradients, loss).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("backward needs a nonempty batch")
    kind = model.config.activation
    rate = model.config.dropout_rate
    slopes = model.prelu_slopes
    n = X.shape[0]

    pred, caches, a_last = _forward_batch(model, X, masks)
    loss = mse_loss(pred, y)

    d_weights = [np.zeros_like(w) for w in model.weights]
    d_biases = [np.zeros_like(b) for b in model.biases]
    d_slopes = None if slopes is None else np.zeros_like(slopes)

    d_pred = (2.0 / n) * (pred - y)
    d_weights[-1][:] = a_last.T @ d_pred[:, None]
    d_biases[-1][:] = d_pred.sum()
    d_a = d_pred[:, None] @ model.weights[-1].T

    for k in range(model.n_hidden - 1, -1, -1):
        a_in, z, h, _ = caches[k]
        if masks is not None:
            d_h = d_a * (masks[k] / (1.0 - rate))
        else:
            d_h = d_a
        slope = float(slopes[k]) if slopes is not None else 0.0
        d_z = d_h * _activation_grad(z, h, kind, slope)
        if d_slopes is not None:
            # h = slope * z on the non-positive side, so dL/dslope = sum dh * z there
            d_slopes[k] = float(np.sum(np.where(z > 0.0, 0.0, d_h * z)))
        d_weights[k][:] = a_in.T @ d_z
        d_biases[k][:] = d_z.sum(axis=0)
        d_a = d_z @ model.weights[k].T

    return NetGradients(d_weights, d_biases, d_slopes), loss


@dataclass
class NadamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = NADAM_BETA1
    beta2: float = NADAM_BETA2
    eps: float = NADAM_EPS

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "NadamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def nadam_step(params: list[np.ndarray], grads: list[np.ndarray],
               state: NadamState, lr: float) -> tuple[list[np.ndarray], NadamState]:
    """One Nadam update, in place on ``params``.

    t <- t+1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
    mhat = m / (1 - b1^(t+1));
    update = lr (b1 mhat + (1-b1) g / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    state.t += 1
    t = state.t
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[:] = b1 * m + (1.0 - b1) * g
        v[:] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** (t + 1))
        v_hat = v / (1.0 - b2 ** t)
        update = lr * (b1 * m_hat + (1.0 - b1) * g / (1.0 - b1 ** t)) / (
            np.sqrt(v_hat) + eps
        )
        p -= update
    return params, state


# --------------------------------------------------------------------------
# Compiled training path.  Each kernel restates a reference function above;
# when editing either side, keep the arithmetic expressions literally in
# step or the parity tests will (rightly) fail.

_ACT_ID = {name: i for i, name in enumerate(ACTIVATIONS)}


@njit(cache=True)
def _act_fill(Z, H, act_id, slope):
    """H <- activation(Z), elementwise; mirrors _activate."""
    n, w = Z.shape
    for i in range(n):
        for j in range(w):
            z = Z[i, j]
            if act_id == 0:
                H[i, j] = z if z > 0.0 else 0.0
            elif act_id == 1:
                H[i, j] = z if z > 0.0 else ELU_ALPHA * math.expm1(z)
            elif act_id == 2:
                H[i, j] = z if z > 0.0 else LEAKY_SLOPE * z
            elif act_id == 3:
                H[i, j] = z if z > 0.0 else slope * z
            elif act_id == 4:
                H[i, j] = math.tanh(z)
            else:
                H[i, j] = 1.0 / (1.0 + math.exp(-z))


@njit(cache=True)
def _act_grad_fill(Z, H, G, act_id, slope):
    """G <- d activation / dz, elementwise; mirrors _activation_grad."""
    n, w = Z.shape
    for i in range(n):
        for j in range(w):
            z = Z[i, j]
            if act_id == 0:
                G[i, j] = 1.0 if z > 0.0 else 0.0
            elif act_id == 1:
                G[i, j] = 1.0 if z > 0.0 else H[i, j] + ELU_ALPHA
            elif act_id == 2:
                G[i, j] = 1.0 if z > 0.0 else LEAKY_SLOPE
            elif act_id == 3:
                G[i, j] = 1.0 if z > 0.0 else slope
            elif act_id == 4:
                G[i, j] = 1.0 - H[i, j] * H[i, j]
            else:
                G[i, j] = H[i, j] * (1.0 - H[i, j])


@njit(cache=True, inline="always")
def _drop_scale(S, U, rate, inv_keep):
    """S with units whose uniform draw fell below ``rate`` zeroed, kept
    units scaled by ``inv_keep``.  The factor is selected and multiplied
    (rather than the result) so non-finite entries poison dropped units
    the same way a materialized 0/1 mask would."""
    out = np.empty_like(S)
    n, w = S.shape
    for i in range(n):
        for j in range(w):
            out[i, j] = S[i, j] * (inv_keep if U[i, j] >= rate else 0.0)
    return out


@njit(cache=True)
def _batch_grads(Xb, yb, Ws, bs, ap, us, act_id, rate, inv_keep):
    """Forward + backward on one batch; mirrors backward().

    ``us`` holds one uniform draw per hidden layer for these rows; a unit
    is dropped when its draw is below ``rate``.  Returns (weight grads,
    bias grads, prelu grads, batch loss).
    """
    B = Xb.shape[0]
    L = len(Ws) - 1

    a_ins = [Xb]
    zs = []
    hs = []
    A = Xb
    for k in range(L):
        Z = np.dot(A, Ws[k])
        Z += bs[k]
        H = np.empty_like(Z)
        _act_fill(Z, H, act_id, ap[k])
        D = _drop_scale(H, us[k], rate, inv_keep)
        zs.append(Z)
        hs.append(H)
        a_ins.append(D)
        A = D

    pred = np.dot(A, Ws[L])
    bL = bs[L][0]
    loss = 0.0
    d_pred = np.empty((B, 1))
    for i in range(B):
        p = pred[i, 0] + bL
        r = p - yb[i]
        loss += r * r
        d_pred[i, 0] = (2.0 / B) * r
    loss /= B

    gWs = [np.dot(a_ins[L].T, d_pred)]
    s = 0.0
    for i in range(B):
        s += d_pred[i, 0]
    gb_out = np.empty(1)
    gb_out[0] = s
    gbs = [gb_out]
    g_ap = np.zeros(len(ap))
    dA = np.dot(d_pred, Ws[L].T)

    for k in range(L - 1, -1, -1):
        dH = _drop_scale(dA, us[k], rate, inv_keep)
        Z = zs[k]
        G = np.empty_like(Z)
        _act_grad_fill(Z, hs[k], G, act_id, ap[k])
        dZ = dH * G
        if act_id == 3:
            acc = 0.0
            for i in range(Z.shape[0]):
                for j in range(Z.shape[1]):
                    if Z[i, j] <= 0.0:
                        acc += dH[i, j] * Z[i, j]
            g_ap[k] = acc
        gWs.append(np.dot(a_ins[k].T, dZ))
        db = np.zeros(dZ.shape[1])
        for i in range(dZ.shape[0]):
            for j in range(dZ.shape[1]):
                db[j] += dZ[i, j]
        gbs.append(db)
        dA = np.dot(dZ, Ws[k].T)

    gWs.reverse()
    gbs.reverse()
    return gWs, gbs, g_ap, loss


@njit(cache=True, inline="always")
def _nadam_axpy(p, g, m, v, lr, c1p, c1, c2):
    """One Nadam update on a flat view; mirrors nadam_step's expressions."""
    b1 = NADAM_BETA1
    b2 = NADAM_BETA2
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (b1 * (mi / c1p) + (1.0 - b1) * gi / c1) / (
            math.sqrt(vi / c2) + NADAM_EPS
        )


@njit(cache=True)
def _train_epoch(Xs, ys, Ws, bs, ap, mWs, vWs, mbs, vbs, m_ap, v_ap,
                 us, act_id, rate, inv_keep, lr, t0, batch_size):
    """All batches of one shuffled epoch, Nadam applied after each.

    ``Xs``/``ys``/``us`` are already in shuffled order.  Returns the
    step counter after the epoch.
    """
    n = Xs.shape[0]
    L = len(Ws) - 1
    t = t0
    for start in range(0, n, batch_size):
        end = min(start + batch_size, n)
        bu = [us[k][start:end] for k in range(L)]
        gWs, gbs, g_ap, _ = _batch_grads(
            Xs[start:end], ys[start:end], Ws, bs, ap, bu, act_id, rate,
            inv_keep
        )
        t += 1
        c1p = 1.0 - math.pow(NADAM_BETA1, t + 1.0)
        c1 = 1.0 - math.pow(NADAM_BETA1, float(t))
        c2 = 1.0 - math.pow(NADAM_BETA2, float(t))
        for k in range(L + 1):
            _nadam_axpy(Ws[k].ravel(), gWs[k].ravel(), mWs[k].ravel(),
                        vWs[k].ravel(), lr, c1p, c1, c2)
            _nadam_axpy(bs[k], gbs[k], mbs[k], vbs[k], lr, c1p, c1, c2)
        if act_id == 3:
            _nadam_axpy(ap, g_ap, m_ap, v_ap, lr, c1p, c1, c2)
    return t


@njit(cache=True)
def _eval_loss(X, y, Ws, bs, ap, act_id, hbufs):
    """Dropout-free full-data MSE in model units of the standardized target.

    ``hbufs`` holds one (n, width) scratch per hidden layer, reused across
    epochs; the activation is applied in place over the affine output.
    """
    L = len(Ws) - 1
    A = X
    for k in range(L):
        Z = hbufs[k]
        np.dot(A, Ws[k], Z)
        Z += bs[k]
        _act_fill(Z, Z, act_id, ap[k])
        A = Z
    pred = np.dot(A, Ws[L])
    bL = bs[L][0]
    loss = 0.0
    for i in range(X.shape[0]):
        r = pred[i, 0] + bL - y[i]
        loss += r * r
    return loss / X.shape[0]


def _as_typed_list(arrays) -> _TypedList:
    out = _TypedList()
    for a in arrays:
        out.append(a)
    return out


_KERNELS_WARMED = False


def warm_train_kernels() -> None:
    """Force-compile the training kernels (cheap once cached on disk).

    Worker pools call this in the parent before forking so children
    inherit compiled code instead of racing to JIT.
    """
    global _KERNELS_WARMED
    if _KERNELS_WARMED:
        return
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 3))
    y = rng.standard_normal(4)
    cfg = NetConfig(n_layers=2, base_width=3, taper=False, taper_size=0.5,
                    dropout_rate=0.2, activation="prelu", learning_rate=1e-3,
                    epochs=1, batch_size=2, seed=0)
    train_net(X, y, cfg)
    _KERNELS_WARMED = True


def train_net(X, y, config: NetConfig, provenance=None) -> NetModel:
    """Mini-batch Nadam training on standardized inputs.

    The target is z-scored on this data and mapped back at predict time
    (center/scale stored on the model). Per epoch the full-data eval-mode
    loss is appended to the trace; training stops early when the trace has
    not improved by EARLY_STOP_MIN_DELTA for EARLY_STOP_PATIENCE epochs.
    Non-finite loss raises TrainingDivergedError.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("train_net expects X (n, d) and y of length n")
    n = X.shape[0]
    if n == 0:
        raise ValueError("train_net needs data")

    rng = np.random.default_rng(config.seed)
    model = build_net(config, X.shape[1], rng=rng)

    y_center = float(y.mean())
    y_sd = float(y.std())
    y_scale = y_sd if y_sd > 0.0 else 1.0
    ys = (y - y_center) / y_scale
    model.y_center = y_center
    model.y_scale = y_scale
    model.provenance = provenance

    widths = config.hidden_widths()
    rate = config.dropout_rate
    inv_keep = 1.0 / (1.0 - rate)
    act_id = _ACT_ID[config.activation]
    # The kernel takes a slope vector unconditionally; non-PReLU nets pass
    # throwaway zeros (never read).
    ap = (
        model.prelu_slopes
        if model.prelu_slopes is not None
        else np.zeros(len(widths))
    )
    Ws = _as_typed_list(model.weights)
    bs = _as_typed_list(model.biases)
    mWs = _as_typed_list([np.zeros_like(w) for w in model.weights])
    vWs = _as_typed_list([np.zeros_like(w) for w in model.weights])
    mbs = _as_typed_list([np.zeros_like(b) for b in model.biases])
    vbs = _as_typed_list([np.zeros_like(b) for b in model.biases])
    m_ap = np.zeros_like(ap)
    v_ap = np.zeros_like(ap)

    # Per-epoch scratch, allocated once and refilled in place.  Filling a
    # preallocated array with rng.random(out=...) consumes the stream
    # exactly as a fresh same-shape draw would, so the shuffle and the
    # per-layer dropout draws keep the documented order.
    Xs = np.empty_like(X)
    ys_shuf = np.empty_like(ys)
    ubufs_py = [np.empty((n, w)) for w in widths]
    ubufs = _as_typed_list(ubufs_py)
    hbufs = _as_typed_list([np.empty((n, w)) for w in widths])

    t = 0
    trace: list[float] = []
    best = math.inf
    best_epoch = -1
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        np.take(X, order, axis=0, out=Xs)
        np.take(ys, order, out=ys_shuf)
        for u in ubufs_py:
            rng.random(out=u)
        t = _train_epoch(Xs, ys_shuf, Ws, bs, ap, mWs, vWs, mbs, vbs, m_ap,
                         v_ap, ubufs, act_id, rate, inv_keep,
                         config.learning_rate, t, config.batch_size)
        loss = float(_eval_loss(X, ys, Ws, bs, ap, act_id, hbufs))
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite training loss at epoch {epoch} "
                f"(lr={config.learning_rate:g}, activation={config.activation})"
            )
        trace.append(loss)
        if loss < best - EARLY_STOP_MIN_DELTA:
            best = loss
            best_epoch = epoch
        elif epoch - best_epoch >= EARLY_STOP_PATIENCE:
            break

    model.loss_trace = tuple(trace)
    return model


def predict_net(model: NetModel, X) -> np.ndarray:
    """Eval-mode predictions mapped back to target units."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"expected {model.n_features} feature columns"
        )
    pred, _, _ = _forward_batch(model, X, None)
    return pred * model.y_scale + model.y_center
