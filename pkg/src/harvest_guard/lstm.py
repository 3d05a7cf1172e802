"""From-scratch stacked LSTM slip classifier, trained with BPTT.

Pure numpy, float64 end to end. The default architecture is 5 stacked
LSTM layers of hidden size 64 over 5-frame windows of 7 features, with
inter-layer dropout 0.2, pre-head dropout 0.3, and a linear 64->3 head
under a softmax. Training is minibatch Adam on the cross-entropy;
everything random (init, shuffling, dropout) comes from one seeded
generator, so a given seed reproduces the final weights bit for bit.

Gate layout inside the stacked weight matrices is i, f, g, o:

    z = x @ W_x.T + h @ W_h.T + b          # (4H,) split into i,f,g,o
    c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
    h' = sigmoid(o) * tanh(c')
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ValidationError
from .slip_windows import FEATURE_ORDER, SlipLabel, SlipWindow, windows_to_arrays


@dataclass(frozen=True)
class LstmArch:
    """Shape of the network. Defaults match the deployed classifier."""

    n_layers: int = 5
    hidden_size: int = 64
    input_size: int = 7
    n_classes: int = 3
    inter_dropout: float = 0.2
    head_dropout: float = 0.3

    def __post_init__(self) -> None:
        if self.n_layers < 1 or self.hidden_size < 1 or self.input_size < 1 or self.n_classes < 2:
            raise ValidationError(f"degenerate architecture: {self}")
        for name in ("inter_dropout", "head_dropout"):
            rate = getattr(self, name)
            if not (0.0 <= rate < 1.0):
                raise ValidationError(f"{name} must lie in [0, 1), got {rate}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.005
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs <= 0:
            raise ValidationError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise ValidationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size <= 0:
            raise ValidationError(f"batch size must be positive, got {self.batch_size}")
        if not (0.0 <= self.beta1 < 1.0) or not (0.0 <= self.beta2 < 1.0):
            raise ValidationError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0.0:
            raise ValidationError(f"eps must be positive, got {self.eps}")


class SlipModel:
    """Weights of the stacked LSTM plus the metadata needed to rerun it.

    w_x[l]: (4H, D_l) input weights, w_h[l]: (4H, H) recurrent weights,
    b[l]: (4H,) bias; w_out: (C, H), b_out: (C,). metadata records the
    seed, the feature order enforced at inference, and the training
    hyperparameters.
    """

    def __init__(
        self,
        arch: LstmArch,
        w_x: list[np.ndarray],
        w_h: list[np.ndarray],
        b: list[np.ndarray],
        w_out: np.ndarray,
        b_out: np.ndarray,
        metadata: dict[str, Any] | None = None,
    ) -> None:
        self.arch = arch
        self.w_x = w_x
        self.w_h = w_h
        self.b = b
        self.w_out = w_out
        self.b_out = b_out
        self.metadata: dict[str, Any] = dict(metadata or {})
        self.metadata.setdefault("feature_order", list(FEATURE_ORDER))
        self._check_shapes()

    def _check_shapes(self) -> None:
        a = self.arch
        if not (len(self.w_x) == len(self.w_h) == len(self.b) == a.n_layers):
            raise ValidationError("per-layer array count does not match layer count")
        for layer in range(a.n_layers):
            d_in = a.input_size if layer == 0 else a.hidden_size
            expect = {
                "w_x": (4 * a.hidden_size, d_in),
                "w_h": (4 * a.hidden_size, a.hidden_size),
                "b": (4 * a.hidden_size,),
            }
            for name, want in expect.items():
                got = getattr(self, name)[layer].shape
                if got != want:
                    raise ValidationError(f"layer {layer} {name} shape {got}, expected {want}")
        if self.w_out.shape != (a.n_classes, a.hidden_size):
            raise ValidationError(f"w_out shape {self.w_out.shape}, expected {(a.n_classes, a.hidden_size)}")
        if self.b_out.shape != (a.n_classes,):
            raise ValidationError(f"b_out shape {self.b_out.shape}, expected {(a.n_classes,)}")

    @property
    def feature_order(self) -> tuple[str, ...]:
        return tuple(self.metadata["feature_order"])

    def parameters(self) -> list[np.ndarray]:
        """All weight arrays in a fixed order (layers bottom-up, then head)."""
        params: list[np.ndarray] = []
        for layer in range(self.arch.n_layers):
            params.extend((self.w_x[layer], self.w_h[layer], self.b[layer]))
        params.extend((self.w_out, self.b_out))
        return params

    def named_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in range(self.arch.n_layers):
            out[f"layer{layer}.w_x"] = self.w_x[layer]
            out[f"layer{layer}.w_h"] = self.w_h[layer]
            out[f"layer{layer}.b"] = self.b[layer]
        out["head.w"] = self.w_out
        out["head.b"] = self.b_out
        return out

    def copy(self) -> "SlipModel":
        return SlipModel(
            self.arch,
            [w.copy() for w in self.w_x],
            [w.copy() for w in self.w_h],
            [v.copy() for v in self.b],
            self.w_out.copy(),
            self.b_out.copy(),
            dict(self.metadata),
        )


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal_gates(rng: np.random.Generator, h: int) -> np.ndarray:
    """(4H, H) recurrent matrix: one orthogonal block per gate. Keeps the
    hidden-state norm through depth, which a small uniform init does not."""
    blocks = []
    for _ in range(4):
        q, r = np.linalg.qr(rng.normal(size=(h, h)))
        blocks.append(q * np.sign(np.diag(r)))
    return np.concatenate(blocks, axis=0)


def init_model(arch: LstmArch = LstmArch(), seed: int = 0, rng: np.random.Generator | None = None) -> SlipModel:
    """Fresh model: glorot-uniform input weights, orthogonal recurrent
    blocks, biases zero except the forget gate's, which starts at 1 so
    early training does not forget everything."""
    if rng is None:
        rng = np.random.default_rng(seed)
    h = arch.hidden_size
    w_x, w_h, b = [], [], []
    for layer in range(arch.n_layers):
        d_in = arch.input_size if layer == 0 else h
        w_x.append(_glorot(rng, (4 * h, d_in)))
        w_h.append(_orthogonal_gates(rng, h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        b.append(bias)
    w_out = _glorot(rng, (arch.n_classes, h))
    b_out = np.zeros(arch.n_classes)
    return SlipModel(arch, w_x, w_h, b, w_out, b_out, metadata={"seed": seed})


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(
    model: SlipModel, x: np.ndarray, dropout_rng: np.random.Generator | None
) -> tuple[np.ndarray, dict[str, Any]]:
    """Run (B, T, D) inputs through the stack; returns logits and the
    cache the backward pass needs. dropout_rng None means inference:
    no dropout anywhere."""
    a = model.arch
    n_batch, n_steps, d_in = x.shape
    if d_in != a.input_size:
        raise ValidationError(f"input feature size {d_in}, model expects {a.input_size}")
    h_size = a.hidden_size

    cache: dict[str, Any] = {"steps": [], "inputs": [], "masks": [], "x": x}
    current = x
    for layer in range(a.n_layers):
        cache["inputs"].append(current)
        h = np.zeros((n_batch, h_size))
        c = np.zeros((n_batch, h_size))
        step_cache = []
        outputs = np.empty((n_batch, n_steps, h_size))
        for t in range(n_steps):
            x_t = current[:, t, :]
            z = x_t @ model.w_x[layer].T + h @ model.w_h[layer].T + model.b[layer]
            gi = _sigmoid(z[:, :h_size])
            gf = _sigmoid(z[:, h_size : 2 * h_size])
            gg = np.tanh(z[:, 2 * h_size : 3 * h_size])
            go = _sigmoid(z[:, 3 * h_size :])
            c_new = gf * c + gi * gg
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c
            step_cache.append((x_t, h, c, gi, gf, gg, go, tanh_c))
            h, c = h_new, c_new
            outputs[:, t, :] = h
        cache["steps"].append(step_cache)

        mask = None
        if dropout_rng is not None and layer < a.n_layers - 1 and a.inter_dropout > 0.0:
            keep = 1.0 - a.inter_dropout
            mask = (dropout_rng.random(outputs.shape) < keep) / keep
            outputs = outputs * mask
        cache["masks"].append(mask)
        current = outputs

    h_final = current[:, -1, :]
    head_mask = None
    if dropout_rng is not None and a.head_dropout > 0.0:
        keep = 1.0 - a.head_dropout
        head_mask = (dropout_rng.random(h_final.shape) < keep) / keep
        h_final = h_final * head_mask
    cache["head_mask"] = head_mask
    cache["h_final"] = h_final
    logits = h_final @ model.w_out.T + model.b_out
    return logits, cache


def _backward_batch(
    model: SlipModel, cache: dict[str, Any], dlogits: np.ndarray
) -> list[np.ndarray]:
    """Gradients for every parameter, in model.parameters() order."""
    a = model.arch
    h_size = a.hidden_size
    x = cache["x"]
    n_batch, n_steps, _ = x.shape

    d_w_out = dlogits.T @ cache["h_final"]
    d_b_out = dlogits.sum(axis=0)
    dh_final = dlogits @ model.w_out
    if cache["head_mask"] is not None:
        dh_final = dh_final * cache["head_mask"]

    d_current = np.zeros((n_batch, n_steps, h_size))
    d_current[:, -1, :] = dh_final

    grads_layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = [None] * a.n_layers  # type: ignore[list-item]
    for layer in reversed(range(a.n_layers)):
        if cache["masks"][layer] is not None:
            d_current = d_current * cache["masks"][layer]
        d_in = a.input_size if layer == 0 else h_size
        d_w_x = np.zeros_like(model.w_x[layer])
        d_w_h = np.zeros_like(model.w_h[layer])
        d_b = np.zeros_like(model.b[layer])
        d_input = np.zeros((n_batch, n_steps, d_in))
        dh_next = np.zeros((n_batch, h_size))
        dc_next = np.zeros((n_batch, h_size))
        for t in reversed(range(n_steps)):
            x_t, h_prev, c_prev, gi, gf, gg, go, tanh_c = cache["steps"][layer][t]
            dh = d_current[:, t, :] + dh_next
            d_go = dh * tanh_c
            dc = dc_next + dh * go * (1.0 - tanh_c * tanh_c)
            d_gi = dc * gg
            d_gf = dc * c_prev
            d_gg = dc * gi
            dc_next = dc * gf
            dz = np.concatenate(
                [
                    d_gi * gi * (1.0 - gi),
                    d_gf * gf * (1.0 - gf),
                    d_gg * (1.0 - gg * gg),
                    d_go * go * (1.0 - go),
                ],
                axis=1,
            )
            d_w_x += dz.T @ x_t
            d_w_h += dz.T @ h_prev
            d_b += dz.sum(axis=0)
            d_input[:, t, :] = dz @ model.w_x[layer]
            dh_next = dz @ model.w_h[layer]
        grads_layers[layer] = (d_w_x, d_w_h, d_b)
        d_current = d_input

    grads: list[np.ndarray] = []
    for layer in range(a.n_layers):
        grads.extend(grads_layers[layer])
    grads.extend((d_w_out, d_b_out))
    return grads


def loss_and_grads(
    model: SlipModel,
    x: np.ndarray,
    y: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch plus gradients for every
    parameter. Pass a generator to draw dropout masks; None runs the
    network deterministically (used by the finite-difference checks)."""
    logits, cache = _forward_batch(model, x, dropout_rng)
    probs = softmax(logits)
    n = x.shape[0]
    eps = 1e-12
    loss = float(-np.log(probs[np.arange(n), y] + eps).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, _backward_batch(model, cache, dlogits)


def predict_proba(model: SlipModel, x: np.ndarray) -> np.ndarray:
    """(B, T, D) windows -> (B, C) class probabilities, no dropout."""
    logits, _ = _forward_batch(model, x, dropout_rng=None)
    return softmax(logits)


def lstm_forward(model: SlipModel, window: SlipWindow, mode: str = "infer") -> "SlipProbabilities":
    """Single-window forward pass.

    infer mode is pure and repeatable; train mode draws fresh dropout
    masks from the model's metadata seed stream and is only meant for
    inspecting stochastic behavior.
    """
    from .slip_decision import SlipProbabilities

    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.stack([f.as_vector(model.feature_order) for f in window.frames])[None, :, :]
    rng = np.random.default_rng(model.metadata.get("seed", 0)) if mode == "train" else None
    logits, _ = _forward_batch(model, x, dropout_rng=rng)
    p = softmax(logits)[0]
    return SlipProbabilities(p_normal=float(p[0]), p_slipping=float(p[1]), p_slipped=float(p[2]))


def lstm_train(
    train_windows: Sequence[SlipWindow],
    val_windows: Sequence[SlipWindow] = (),
    config: TrainConfig = TrainConfig(),
    arch: LstmArch = LstmArch(),
) -> SlipModel:
    """Train on labeled windows; returns the fitted model.

    The per-epoch mean training loss lands in metadata["train_loss"]
    (and validation accuracy in metadata["val_accuracy"] when a
    validation set is given). With a validation set the weights returned
    are those of the best-accuracy epoch (earliest on ties), recorded in
    metadata["best_epoch"]; without one, the final epoch's. Same data +
    same config => bitwise-equal weights.
    """
    if not train_windows:
        raise ValidationError("training needs a non-empty window set")
    rng = np.random.default_rng(config.seed)
    model = init_model(arch, seed=config.seed, rng=rng)
    x_train, y_train = windows_to_arrays(train_windows, model.feature_order)
    x_val, y_val = (None, None)
    if val_windows:
        x_val, y_val = windows_to_arrays(val_windows, model.feature_order)

    params = model.parameters()
    # Adam moment buffers; the depth of the stack shrinks raw gradients
    # by orders of magnitude, so plain SGD stalls at the uniform logit.
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    n = len(train_windows)
    losses: list[float] = []
    val_acc: list[float] = []
    best_acc = -1.0
    best_epoch = 0
    best_params: list[np.ndarray] | None = None
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, x_train[idx], y_train[idx], dropout_rng=rng)
            epoch_loss += loss * len(idx)
            step += 1
            bias1 = 1.0 - config.beta1**step
            bias2 = 1.0 - config.beta2**step
            for p, a, b, g in zip(params, m1, m2, grads):
                a *= config.beta1
                a += (1.0 - config.beta1) * g
                b *= config.beta2
                b += (1.0 - config.beta2) * g * g
                p -= config.learning_rate * (a / bias1) / (np.sqrt(b / bias2) + config.eps)
        losses.append(epoch_loss / n)
        if x_val is not None:
            probs = predict_proba(model, x_val)
            pred = probs.shape[1] - 1 - probs[:, ::-1].argmax(axis=1)
            acc = float((pred == y_val).mean())
            val_acc.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch + 1
                best_params = [p.copy() for p in params]

    if best_params is not None:
        for p, kept in zip(params, best_params):
            p[...] = kept
        model.metadata["best_epoch"] = best_epoch

    model.metadata.update(
        {
            "seed": config.seed,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "optimizer": "adam",
            "train_loss": losses,
        }
    )
    if val_acc:
        model.metadata["val_accuracy"] = val_acc
    return model


def evaluate(model: SlipModel, windows: Sequence[SlipWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and true labels for a window set (argmax, ties
    toward higher severity)."""
    if not windows:
        raise ValidationError("evaluate needs a non-empty window set")
    x, y = windows_to_arrays(windows, model.feature_order)
    probs = predict_proba(model, x)
    # argmax with ties broken toward the higher class index (= severity)
    rev = probs[:, ::-1]
    pred = probs.shape[1] - 1 - rev.argmax(axis=1)
    return pred, y
