"""Trainable aggregation heads over per-frame feature sequences.

Every head shares the same front: a time-distributed dense layer that maps
each frame's feature vector through one weight matrix and a row softmax,
yielding an F x C matrix of per-frame class distributions. The head then
collapses the frame axis into a single distribution over the C location
classes:

* ``product``  - elementwise product of the rows, renormalized (computed in
  log space, which is the same function but immune to underflow at F = 20)
* ``flatten``  - rows concatenated into one F*C vector, then a second dense
  layer and softmax
* ``average``  - arithmetic mean of the rows
* ``max``      - elementwise maximum of the rows, renormalized
* ``lstm``     - a recurrent cell consuming rows in time order; softmax of
  the final hidden state
* ``bilstm``   - two independent recurrent cells, one per direction; softmax
  of the sum of their final hidden states

The hidden width of the recurrent heads equals C, so every head emits a
vector of the same size. Backward passes are exact analytic gradients of the
cross-entropy loss, verified against central finite differences in the test
suite.

Internally all passes are batched over leading axis B; the public
``head_forward`` / ``head_backward`` operate on a single F x D sequence.
Model checkpoints use a versioned binary layout (magic ``SLRM``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import FeatureFormatError

LOG_CLAMP = 1e-12  # floor for probabilities inside logs


class HeadKind(Enum):
    PRODUCT = "product"
    FLATTEN = "flatten"
    AVERAGE = "average"
    MAX = "max"
    LSTM = "lstm"
    BILSTM = "bilstm"

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, text: str) -> "HeadKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown head kind {text!r}; valid kinds: {valid}") from None


_DISPLAY_NAMES = {
    HeadKind.PRODUCT: "Product",
    HeadKind.FLATTEN: "Flatten",
    HeadKind.AVERAGE: "Average",
    HeadKind.MAX: "Max",
    HeadKind.LSTM: "LSTM",
    HeadKind.BILSTM: "BidirectionalLSTM",
}

# Canonical model order used by run matrices and reports.
MODEL_ORDER = [
    HeadKind.PRODUCT,
    HeadKind.FLATTEN,
    HeadKind.AVERAGE,
    HeadKind.MAX,
    HeadKind.LSTM,
    HeadKind.BILSTM,
]
MODEL_NAMES = [kind.display_name for kind in MODEL_ORDER]


@dataclass
class LstmParams:
    """One direction's gate parameters: input, forget, output, candidate."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_o: np.ndarray
    U_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def named(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        order = (
            "W_i", "W_f", "W_o", "W_g",
            "U_i", "U_f", "U_o", "U_g",
            "b_i", "b_f", "b_o", "b_g",
        )
        return [(prefix + name, getattr(self, name)) for name in order]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gate matrices concatenated as (C, 4H), (H, 4H), (4H,) for fast matmuls."""
        W = np.concatenate((self.W_i, self.W_f, self.W_o, self.W_g), axis=1)
        U = np.concatenate((self.U_i, self.U_f, self.U_o, self.U_g), axis=1)
        b = np.concatenate((self.b_i, self.b_f, self.b_o, self.b_g))
        return W, U, b


@dataclass
class HeadModel:
    """Parameters of one head plus the shared time-distributed dense layer."""

    kind: HeadKind
    frames_per_scene: int
    feature_dim: int
    num_classes: int
    dense_W: np.ndarray
    dense_b: np.ndarray
    dense2_W: np.ndarray | None = None
    dense2_b: np.ndarray | None = None
    lstm: LstmParams | None = None
    lstm_fwd: LstmParams | None = None
    lstm_bwd: LstmParams | None = None

    @property
    def hidden_dim(self) -> int:
        return self.num_classes

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in canonical (checkpoint) order."""
        entries = [("dense_W", self.dense_W), ("dense_b", self.dense_b)]
        if self.kind is HeadKind.FLATTEN:
            entries += [("dense2_W", self.dense2_W), ("dense2_b", self.dense2_b)]
        elif self.kind is HeadKind.LSTM:
            entries += self.lstm.named()
        elif self.kind is HeadKind.BILSTM:
            entries += self.lstm_fwd.named("fwd.")
            entries += self.lstm_bwd.named("bwd.")
        return entries

    def params_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, plus the output distribution."""

    per_frame: np.ndarray  # (F, C) row distributions
    output: np.ndarray  # (C,), sums to 1
    _batch: "_BatchTrace" = field(repr=False)


@dataclass
class _BatchTrace:
    features: np.ndarray  # (B, F, D)
    P: np.ndarray  # (B, F, C)
    y: np.ndarray  # (B, C)
    extras: dict = field(default_factory=dict)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def dense_timedistributed(
    features: np.ndarray, dense_W: np.ndarray, dense_b: np.ndarray
) -> np.ndarray:
    """Apply the shared dense layer to every frame; rows come out as distributions."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != dense_W.shape[0]:
        raise ValueError(
            f"features shape {features.shape} does not match weights {dense_W.shape}"
        )
    return softmax(features @ dense_W + dense_b, axis=-1)


def _softmax_rows_backward(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of a row softmax: dZ from dP at output P."""
    return P * (dP - np.sum(dP * P, axis=-1, keepdims=True))


def _lstm_forward_batch(P: np.ndarray, params: LstmParams) -> dict:
    B, F, _ = P.shape
    H = params.b_i.shape[0]
    W, U, b = params.stacked()
    gates = np.empty((B, F, 4 * H))  # post-activation i|f|o|g per step
    c_all = np.empty((B, F, H))
    tc_all = np.empty((B, F, H))
    h_all = np.empty((B, F, H))
    # The input contribution has no recurrence, so compute it for all steps at once.
    xW = P.reshape(B * F, -1) @ W
    xW = xW.reshape(B, F, 4 * H) + b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(F):
        a = xW[:, t, :] + h @ U
        ifo = _sigmoid(a[:, : 3 * H])  # contiguous i|f|o block, one call
        g = np.tanh(a[:, 3 * H :])
        i, f, o = ifo[:, :H], ifo[:, H : 2 * H], ifo[:, 2 * H :]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, : 3 * H] = ifo
        gates[:, t, 3 * H :] = g
        c_all[:, t], tc_all[:, t], h_all[:, t] = c, tc, h
    return {"gates": gates, "c": c_all, "tc": tc_all, "h": h_all}


def _lstm_backward_batch(
    P: np.ndarray, params: LstmParams, state: dict, dh_last: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """BPTT through the cell; returns dP and per-parameter gradient sums over B."""
    B, F, _ = P.shape
    H = params.b_i.shape[0]
    W, U, _ = params.stacked()
    gates, c_all, tc_all, h_all = state["gates"], state["c"], state["tc"], state["h"]

    dA = np.empty((B, F, 4 * H))  # pre-activation gate gradients
    dh = dh_last
    dc = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(F - 1, -1, -1):
        i = gates[:, t, :H]
        f = gates[:, t, H : 2 * H]
        o = gates[:, t, 2 * H : 3 * H]
        g = gates[:, t, 3 * H :]
        tc = tc_all[:, t]
        c_prev = c_all[:, t - 1] if t > 0 else zeros
        dc = dc + dh * o * (1.0 - tc * tc)
        dA[:, t, :H] = (dc * g) * i * (1.0 - i)
        dA[:, t, H : 2 * H] = (dc * c_prev) * f * (1.0 - f)
        dA[:, t, 2 * H : 3 * H] = (dh * tc) * o * (1.0 - o)
        dA[:, t, 3 * H :] = (dc * i) * (1.0 - g * g)
        dh = dA[:, t, :] @ U.T
        dc = dc * f

    # Accumulations over (B, F) collapse into single matmuls.
    dA_flat = dA.reshape(B * F, 4 * H)
    dW = P.reshape(B * F, -1).T @ dA_flat
    h_prev = np.concatenate((np.zeros((B, 1, H)), h_all[:, :-1, :]), axis=1)
    dU = h_prev.reshape(B * F, H).T @ dA_flat
    db = dA_flat.sum(axis=0)
    dP = (dA_flat @ W.T).reshape(B, F, -1)

    grads = {
        "W_i": dW[:, :H], "W_f": dW[:, H : 2 * H],
        "W_o": dW[:, 2 * H : 3 * H], "W_g": dW[:, 3 * H :],
        "U_i": dU[:, :H], "U_f": dU[:, H : 2 * H],
        "U_o": dU[:, 2 * H : 3 * H], "U_g": dU[:, 3 * H :],
        "b_i": db[:H], "b_f": db[H : 2 * H],
        "b_o": db[2 * H : 3 * H], "b_g": db[3 * H :],
    }
    return dP, grads


def _forward_batch(model: HeadModel, features: np.ndarray) -> _BatchTrace:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError("batched features must have shape (B, F, D)")
    B, F, D = features.shape
    if D != model.feature_dim:
        raise ValueError(
            f"feature width {D} does not match model feature_dim {model.feature_dim}"
        )
    if model.kind is HeadKind.FLATTEN and F != model.frames_per_scene:
        raise ValueError(
            f"flatten head was built for F={model.frames_per_scene}, got F={F}"
        )
    Z = features @ model.dense_W + model.dense_b
    P = softmax(Z, axis=-1)
    extras: dict = {}

    if model.kind is HeadKind.PRODUCT:
        S = np.sum(np.log(P), axis=1)
        y = softmax(S, axis=-1)
    elif model.kind is HeadKind.FLATTEN:
        V = P.reshape(B, F * model.num_classes)
        logits = V @ model.dense2_W + model.dense2_b
        y = softmax(logits, axis=-1)
        extras["V"] = V
    elif model.kind is HeadKind.AVERAGE:
        y = P.mean(axis=1)
    elif model.kind is HeadKind.MAX:
        argmax = P.argmax(axis=1)  # (B, C) frame index per class column
        m = np.take_along_axis(P, argmax[:, None, :], axis=1)[:, 0, :]
        y = m / m.sum(axis=-1, keepdims=True)
        extras["argmax"] = argmax
        extras["m"] = m
    elif model.kind is HeadKind.LSTM:
        state = _lstm_forward_batch(P, model.lstm)
        y = softmax(state["h"][:, -1, :], axis=-1)
        extras["state"] = state
    elif model.kind is HeadKind.BILSTM:
        state_f = _lstm_forward_batch(P, model.lstm_fwd)
        state_b = _lstm_forward_batch(P[:, ::-1, :], model.lstm_bwd)
        y = softmax(state_f["h"][:, -1, :] + state_b["h"][:, -1, :], axis=-1)
        extras["state_f"] = state_f
        extras["state_b"] = state_b
    else:  # pragma: no cover - enum is closed
        raise AssertionError(model.kind)
    return _BatchTrace(features=features, P=P, y=y, extras=extras)


def _backward_batch(
    model: HeadModel, trace: _BatchTrace, targets: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradient sums over the batch of -ln y[target] w.r.t. every parameter."""
    targets = np.asarray(targets)
    if np.any(targets < 0) or np.any(targets >= model.num_classes):
        raise ValueError("target class id out of range")
    P, y = trace.P, trace.y
    B, F, C = P.shape
    onehot = np.zeros((B, C))
    onehot[np.arange(B), targets] = 1.0
    grads: dict[str, np.ndarray] = {}

    if model.kind is HeadKind.PRODUCT:
        dS = y - onehot
        dP = dS[:, None, :] / P
    elif model.kind is HeadKind.FLATTEN:
        dlogits = y - onehot
        V = trace.extras["V"]
        grads["dense2_W"] = V.T @ dlogits
        grads["dense2_b"] = dlogits.sum(axis=0)
        dP = (dlogits @ model.dense2_W.T).reshape(B, F, C)
    elif model.kind is HeadKind.AVERAGE:
        y_t = y[np.arange(B), targets]
        dy = -onehot / y_t[:, None]
        dP = np.repeat(dy[:, None, :] / F, F, axis=1)
    elif model.kind is HeadKind.MAX:
        m = trace.extras["m"]
        argmax = trace.extras["argmax"]
        s = m.sum(axis=-1, keepdims=True)
        y_t = y[np.arange(B), targets]
        # dL/dm_d = (1 - delta_{d,t} / y_t) / s  for L = -ln y_t, y = m / sum(m)
        dm = (1.0 - onehot / y_t[:, None]) / s
        dP = np.zeros_like(P)
        np.put_along_axis(dP, argmax[:, None, :], dm[:, None, :], axis=1)
    elif model.kind is HeadKind.LSTM:
        dh_last = y - onehot
        dP, lstm_grads = _lstm_backward_batch(
            P, model.lstm, trace.extras["state"], dh_last
        )
        grads.update(lstm_grads)
    elif model.kind is HeadKind.BILSTM:
        dh_last = y - onehot
        dP_f, grads_f = _lstm_backward_batch(
            P, model.lstm_fwd, trace.extras["state_f"], dh_last
        )
        dP_b, grads_b = _lstm_backward_batch(
            P[:, ::-1, :], model.lstm_bwd, trace.extras["state_b"], dh_last
        )
        grads.update({f"fwd.{k}": v for k, v in grads_f.items()})
        grads.update({f"bwd.{k}": v for k, v in grads_b.items()})
        dP = dP_f + dP_b[:, ::-1, :]
    else:  # pragma: no cover
        raise AssertionError(model.kind)

    dZ = _softmax_rows_backward(P, dP)
    X = trace.features.reshape(B * F, model.feature_dim)
    grads["dense_W"] = X.T @ dZ.reshape(B * F, C)
    grads["dense_b"] = dZ.sum(axis=(0, 1))
    return grads


def head_forward(model: HeadModel, features: np.ndarray) -> ForwardTrace:
    """Run one F x D feature sequence through the dense layer and the head."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D (F, D), got shape {features.shape}")
    batch = _forward_batch(model, features[None])
    return ForwardTrace(per_frame=batch.P[0], output=batch.y[0], _batch=batch)


def head_backward(
    model: HeadModel,
    features: np.ndarray,
    trace: ForwardTrace,
    target: int,
) -> dict[str, np.ndarray]:
    """Exact gradient of -ln(output[target]) w.r.t. every model parameter."""
    if not 0 <= target < model.num_classes:
        raise ValueError(f"target {target} out of range for C={model.num_classes}")
    return _backward_batch(model, trace._batch, np.array([target]))


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-scale, scale, size=(rows, cols))


def _init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmParams:
    weights = {name: _glorot(rng, input_dim, hidden) for name in ("W_i", "W_f", "W_o", "W_g")}
    recurrent = {name: _glorot(rng, hidden, hidden) for name in ("U_i", "U_f", "U_o", "U_g")}
    biases = {
        "b_i": np.zeros(hidden),
        "b_f": np.ones(hidden),  # open forget gate at start
        "b_o": np.zeros(hidden),
        "b_g": np.zeros(hidden),
    }
    return LstmParams(**weights, **recurrent, **biases)


def init_params(
    kind: HeadKind,
    frames_per_scene: int,
    feature_dim: int,
    num_classes: int,
    seed,
) -> HeadModel:
    """Fresh model: Glorot-uniform weights, zero biases, forget-gate bias one."""
    if min(frames_per_scene, feature_dim, num_classes) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    model = HeadModel(
        kind=kind,
        frames_per_scene=frames_per_scene,
        feature_dim=feature_dim,
        num_classes=num_classes,
        dense_W=_glorot(rng, feature_dim, num_classes),
        dense_b=np.zeros(num_classes),
    )
    if kind is HeadKind.FLATTEN:
        model.dense2_W = _glorot(rng, frames_per_scene * num_classes, num_classes)
        model.dense2_b = np.zeros(num_classes)
    elif kind is HeadKind.LSTM:
        model.lstm = _init_lstm(rng, num_classes, num_classes)
    elif kind is HeadKind.BILSTM:
        model.lstm_fwd = _init_lstm(rng, num_classes, num_classes)
        model.lstm_bwd = _init_lstm(rng, num_classes, num_classes)
    return model


CHECKPOINT_MAGIC = b"SLRM"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIBIIII")

_KIND_TAGS = {kind: tag for tag, kind in enumerate(MODEL_ORDER)}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


def save_checkpoint(model: HeadModel, path: str | Path) -> None:
    """Serialize the model: header, then float64 blocks in canonical order."""
    with open(path, "wb") as handle:
        handle.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                _KIND_TAGS[model.kind],
                model.frames_per_scene,
                model.feature_dim,
                model.num_classes,
                model.hidden_dim,
            )
        )
        for _, array in model.named_params():
            handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> HeadModel:
    with open(path, "rb") as handle:
        header = handle.read(_CKPT_HEADER.size)
        if len(header) != _CKPT_HEADER.size:
            raise FeatureFormatError("truncated checkpoint header", offset=len(header))
        magic, version, tag, frames, dim, classes, hidden = _CKPT_HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise FeatureFormatError(f"bad checkpoint magic {magic!r}", offset=0)
        if version != CHECKPOINT_VERSION:
            raise FeatureFormatError(f"unsupported checkpoint version {version}", offset=4)
        if tag not in _TAG_KINDS:
            raise FeatureFormatError(f"unknown head kind tag {tag}", offset=8)
        if hidden != classes:
            raise FeatureFormatError(
                f"checkpoint hidden dim {hidden} != class count {classes}", offset=9
            )
        model = init_params(_TAG_KINDS[tag], frames, dim, classes, seed=0)
        offset = _CKPT_HEADER.size
        for name, array in model.named_params():
            payload = handle.read(array.nbytes)
            if len(payload) != array.nbytes:
                raise FeatureFormatError(
                    f"truncated checkpoint block {name}", offset=offset + len(payload)
                )
            array[...] = np.frombuffer(payload, dtype="<f8").reshape(array.shape)
            offset += array.nbytes
        if handle.read(1):
            raise FeatureFormatError("trailing bytes after checkpoint", offset=offset)
    return model
