"""Dense, LSTM and multi-head attention blocks with hand-written backprop.

Every block keeps its weights in a ``params`` dict of float64 arrays and
exposes ``forward(x) -> (out, cache)`` and ``backward(cache, d_out) ->
(grads, d_x)``. Models gather the blocks' dicts under prefixed names so
the optimizer and the finite-difference checker see one flat namespace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, ModelError


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise DataError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _uniform(rng, fan_in, shape):
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


# -----------------------------------------------------------------------------
# blocks


class DenseStack:
    """Affine layers, each followed by its own activation."""

    def __init__(self, sizes, activations, rng=None):
        if len(activations) != len(sizes) - 1:
            raise DataError("need one activation per layer")
        self.sizes = list(sizes)
        self.activations = list(activations)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {}
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"W{i}"] = _uniform(rng, n_in, (n_in, n_out))
            self.params[f"b{i}"] = np.zeros(n_out)

    @property
    def n_layers(self):
        return len(self.activations)

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise DataError(f"dense input must have {self.sizes[0]} columns, got shape {X.shape}")
        cache = []
        a = X
        for i, act in enumerate(self.activations):
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            out = _act(act, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, cache, d_out):
        grads = {}
        d = d_out
        for i in reversed(range(self.n_layers)):
            a_in, z, out = cache[i]
            dz = d * _act_grad(self.activations[i], z, out)
            grads[f"W{i}"] = a_in.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            d = dz @ self.params[f"W{i}"].T
        return grads, d


def dense_forward(stack, X):
    return stack.forward(X)[0]


class LSTMBranch:
    """Single LSTM layer; returns the hidden state after the last step.

    Gate blocks in ``W`` / ``b`` are ordered input, forget, output, candidate.
    """

    def __init__(self, input_size, hidden_size, rng=None, forget_bias=1.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.params = {
            "W": _uniform(rng, input_size + H, (input_size + H, 4 * H)),
            "b": np.concatenate([np.zeros(H), np.full(H, forget_bias), np.zeros(2 * H)]),
        }

    @property
    def output_size(self):
        return self.hidden_size

    def forward(self, seq, h0=None, c0=None):
        seq = np.asarray(seq, dtype=float)
        if seq.ndim != 3 or seq.shape[2] != self.input_size:
            raise DataError(f"sequence must have shape (batch, steps, {self.input_size})")
        B, L, _ = seq.shape
        if L == 0:
            raise DataError("empty sequence")
        H = self.hidden_size
        W, b = self.params["W"], self.params["b"]
        h = np.zeros((B, H)) if h0 is None else np.broadcast_to(h0, (B, H)).astype(float)
        c = np.zeros((B, H)) if c0 is None else np.broadcast_to(c0, (B, H)).astype(float)
        steps = []
        hs, cs = [], []
        for t in range(L):
            xh = np.concatenate([seq[:, t, :], h], axis=1)
            z = xh @ W + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            o = sigmoid(z[:, 2 * H : 3 * H])
            g = np.tanh(z[:, 3 * H :])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((xh, i, f, o, g, c_prev, tc))
            hs.append(h)
            cs.append(c)
        cache = {"steps": steps, "hs": np.stack(hs, 1), "cs": np.stack(cs, 1)}
        return h, cache

    def backward(self, cache, d_h):
        H = self.hidden_size
        W = self.params["W"]
        dW = np.zeros_like(W)
        db = np.zeros_like(self.params["b"])
        steps = cache["steps"]
        B = d_h.shape[0]
        d_seq = np.zeros((B, len(steps), self.input_size))
        dh = d_h
        dc = np.zeros((B, H))
        for t in reversed(range(len(steps))):
            xh, i, f, o, g, c_prev, tc = steps[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([
                di * i * (1 - i),
                df * f * (1 - f),
                do * o * (1 - o),
                dg * (1 - g * g),
            ], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            d_seq[:, t, :] = dxh[:, : self.input_size]
            dh = dxh[:, self.input_size :]
            dc = dc * f
        return {"W": dW, "b": db}, d_seq


def lstm_forward(branch, seq, h0=None, c0=None):
    """Final hidden state plus per-step hidden and cell states."""
    h, cache = branch.forward(seq, h0, c0)
    return h, cache["hs"], cache["cs"]


class AttentionBranch:
    """Encoder-only multi-head self-attention over a fixed-length sequence.

    Tokens are embedded with a linear map plus a learned position table, passed
    through scaled dot-product attention per head, concatenated and projected.
    The output at the final position is the branch output.
    """

    def __init__(self, input_size, seq_len, d_model=16, n_heads=2, rng=None):
        if d_model % n_heads:
            raise DataError("d_model must be divisible by n_heads")
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_size = input_size
        self.seq_len = seq_len
        self.d_model = d_model
        self.n_heads = n_heads
        d = d_model
        self.params = {
            "W_in": _uniform(rng, input_size, (input_size, d)),
            "b_in": np.zeros(d),
            "pos": rng.uniform(-0.1, 0.1, size=(seq_len, d)),
            "Wq": _uniform(rng, d, (d, d)),
            "Wk": _uniform(rng, d, (d, d)),
            "Wv": _uniform(rng, d, (d, d)),
            "Wo": _uniform(rng, d, (d, d)),
            "bo": np.zeros(d),
        }

    @property
    def output_size(self):
        return self.d_model

    def _heads(self, M):
        B, L, _ = M.shape
        return M.reshape(B, L, self.n_heads, -1).transpose(0, 2, 1, 3)

    def _merge(self, M):
        B, h, L, dh = M.shape
        return M.transpose(0, 2, 1, 3).reshape(B, L, h * dh)

    def forward(self, seq):
        seq = np.asarray(seq, dtype=float)
        if seq.ndim != 3 or seq.shape[1:] != (self.seq_len, self.input_size):
            raise DataError(
                f"sequence must have shape (batch, {self.seq_len}, {self.input_size}), got {seq.shape}"
            )
        p = self.params
        Z = seq @ p["W_in"] + p["b_in"] + p["pos"]
        Q, K, V = (self._heads(Z @ p[k]) for k in ("Wq", "Wk", "Wv"))
        scale = 1.0 / math.sqrt(self.d_model // self.n_heads)
        A = softmax(Q @ K.transpose(0, 1, 3, 2) * scale)
        C = self._merge(A @ V)
        O = C @ p["Wo"] + p["bo"]
        cache = {"seq": seq, "Z": Z, "Q": Q, "K": K, "V": V, "A": A, "C": C, "scale": scale}
        return O[:, -1, :], cache

    def backward(self, cache, d_out):
        p = self.params
        seq, Z, Q, K, V, A, C = (cache[k] for k in ("seq", "Z", "Q", "K", "V", "A", "C"))
        scale = cache["scale"]
        B, L, d = Z.shape
        dO = np.zeros((B, L, d))
        dO[:, -1, :] = d_out
        grads = {
            "Wo": np.einsum("bld,ble->de", C, dO),
            "bo": dO.sum(axis=(0, 1)),
        }
        dH = self._heads(dO @ p["Wo"].T)
        dA = dH @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dH
        dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
        dQ = self._merge(dS @ K)
        dK = self._merge(dS.transpose(0, 1, 3, 2) @ Q)
        dV = self._merge(dV)
        dZ = np.zeros_like(Z)
        for name, dM in (("Wq", dQ), ("Wk", dK), ("Wv", dV)):
            grads[name] = np.einsum("bld,ble->de", Z, dM)
            dZ += dM @ p[name].T
        grads["W_in"] = np.einsum("bli,bld->id", seq, dZ)
        grads["b_in"] = dZ.sum(axis=(0, 1))
        grads["pos"] = dZ.sum(axis=0)
        return grads, dZ @ p["W_in"].T


def mha_forward(branch, seq):
    """Pooled representation and the attention weights ``(batch, heads, L, L)``."""
    out, cache = branch.forward(seq)
    return out, cache["A"]


# -----------------------------------------------------------------------------
# models


def _collect(blocks):
    out = {}
    for prefix, block in blocks:
        for k, v in block.params.items():
            out[f"{prefix}.{k}"] = v
    return out


def loss_value(kind, pred, y):
    r = pred - y
    if kind == "mse":
        return float(np.mean(r * r))
    if kind == "mae":
        return float(np.mean(np.abs(r)))
    raise DataError(f"unknown loss {kind!r}")


def loss_grad(kind, pred, y):
    r = pred - y
    if kind == "mse":
        return 2.0 * r / len(r)
    if kind == "mae":
        return np.sign(r) / len(r)
    raise DataError(f"unknown loss {kind!r}")


class FNNModel:
    """Feed-forward regressor with a sigmoid output unit."""

    kind = "fnn"

    def __init__(self, n_inputs, hidden=(32, 32, 32, 32), hidden_activation="tanh",
                 seed=0, loss="mse"):
        rng = np.random.default_rng(seed)
        self.hidden = tuple(hidden)
        self.hidden_activation = hidden_activation
        self.loss = loss
        self.stack = DenseStack([n_inputs, *hidden, 1],
                                [hidden_activation] * len(hidden) + ["sigmoid"], rng)
        self.history = []

    @property
    def params(self):
        return _collect([("dense", self.stack)])

    def forward(self, X):
        out, cache = self.stack.forward(X)
        return out[:, 0], cache

    def predict(self, X):
        return self.forward(X)[0]

    def backward(self, cache, d_pred):
        grads, _ = self.stack.backward(cache, d_pred[:, None])
        return {f"dense.{k}": v for k, v in grads.items()}

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_inputs": self.stack.sizes[0],
            "hidden": list(self.hidden),
            "hidden_activation": self.hidden_activation,
            "loss": self.loss,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(d["n_inputs"], d["hidden"], d["hidden_activation"], loss=d["loss"])
        _load_params(m, d["params"])
        m.history = [tuple(h) for h in d.get("history", [])]
        return m


class HybridModel:
    """Sequence branch and static dense branch merged by one sigmoid unit.

    The head's weight vector is laid out ``[sequence part, static part]``.
    """

    kind = "hybrid"

    def __init__(self, n_static, seq_len, branch="lstm", seq_input=1, hidden=(32, 32, 32, 32),
                 hidden_activation="tanh", lstm_hidden=16, d_model=16, n_heads=2, seed=0,
                 loss="mae"):
        rng = np.random.default_rng(seed)
        self.branch_kind = branch
        self.n_static = n_static
        self.seq_len = seq_len
        self.seq_input = seq_input
        self.hidden = tuple(hidden)
        self.hidden_activation = hidden_activation
        self.lstm_hidden = lstm_hidden
        self.d_model = d_model
        self.n_heads = n_heads
        self.loss = loss
        if branch == "lstm":
            self.seq_branch = LSTMBranch(seq_input, lstm_hidden, rng)
        elif branch == "attention":
            self.seq_branch = AttentionBranch(seq_input, seq_len, d_model, n_heads, rng)
        else:
            raise DataError(f"unknown sequence branch {branch!r}")
        self.static_branch = DenseStack([n_static, *hidden], [hidden_activation] * len(hidden), rng)
        self.head = DenseStack([self.seq_branch.output_size + hidden[-1], 1], ["sigmoid"], rng)
        self.history = []

    @property
    def params(self):
        return _collect([("seq", self.seq_branch), ("static", self.static_branch), ("head", self.head)])

    def forward(self, inputs):
        static, seq = inputs
        s_out, s_cache = self.seq_branch.forward(seq)
        f_out, f_cache = self.static_branch.forward(static)
        out, h_cache = self.head.forward(np.concatenate([s_out, f_out], axis=1))
        return out[:, 0], (s_cache, f_cache, h_cache, s_out.shape[1])

    def predict(self, inputs):
        return self.forward(inputs)[0]

    def backward(self, cache, d_pred):
        s_cache, f_cache, h_cache, n_seq = cache
        g_head, d_merged = self.head.backward(h_cache, d_pred[:, None])
        g_seq, _ = self.seq_branch.backward(s_cache, d_merged[:, :n_seq])
        g_static, _ = self.static_branch.backward(f_cache, d_merged[:, n_seq:])
        grads = {}
        for prefix, g in (("seq", g_seq), ("static", g_static), ("head", g_head)):
            grads.update({f"{prefix}.{k}": v for k, v in g.items()})
        return grads

    def to_dict(self):
        return {
            "kind": self.kind,
            "branch": self.branch_kind,
            "n_static": self.n_static,
            "seq_len": self.seq_len,
            "seq_input": self.seq_input,
            "hidden": list(self.hidden),
            "hidden_activation": self.hidden_activation,
            "lstm_hidden": self.lstm_hidden,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "loss": self.loss,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(d["n_static"], d["seq_len"], d["branch"], d["seq_input"], d["hidden"],
                d["hidden_activation"], d["lstm_hidden"], d["d_model"], d["n_heads"],
                loss=d["loss"])
        _load_params(m, d["params"])
        m.history = [tuple(h) for h in d.get("history", [])]
        return m


def _load_params(model, stored):
    params = model.params
    if set(params) != set(stored):
        raise DataError("stored parameters do not match the architecture")
    for k, v in params.items():
        v[...] = np.asarray(stored[k], dtype=float)


def gradient(model, inputs, y, loss=None):
    """Loss and exact parameter gradients for one batch.

    The mean-absolute loss uses subgradient 0 at a zero residual.
    """
    loss = model.loss if loss is None else loss
    y = np.asarray(y, dtype=float)
    pred, cache = model.forward(inputs)
    if not np.all(np.isfinite(pred)):
        bad = [k for k, v in model.params.items() if not np.all(np.isfinite(v))]
        raise ModelError(f"non-finite activations; non-finite parameters: {bad or 'none'}")
    return loss_value(loss, pred, y), model.backward(cache, loss_grad(loss, pred, y))


def numeric_gradient(model, inputs, y, loss=None, step=1e-5):
    """Central finite differences of the batch loss for every parameter entry."""
    loss = model.loss if loss is None else loss
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            up = loss_value(loss, model.predict(inputs), y)
            p[idx] = orig - step
            down = loss_value(loss, model.predict(inputs), y)
            p[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


# -----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    step_size: float = 1e-3
    seed: int = 0
    patience: int | None = None
    val_fraction: float = 0.0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.step_size <= 0:
            raise DataError("epochs, batch_size and step_size must be positive")
        if self.patience is not None and self.patience < 1:
            raise DataError("patience must be positive")
        if not 0 <= self.val_fraction < 1:
            raise DataError("val_fraction must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, params, step_size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size = step_size
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= self.step_size * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params, step_size):
        self.step_size = step_size

    def step(self, params, grads):
        for k, p in params.items():
            p -= self.step_size * grads[k]


def _take(inputs, idx):
    if isinstance(inputs, tuple):
        return tuple(a[idx] for a in inputs)
    return inputs[idx]


def train(model, inputs, y, cfg):
    """Mini-batch training; ``model.history`` gets (epoch, train, validation) losses.

    The recorded training loss is evaluated on the full training split after
    each epoch. With a validation split and ``patience`` the best-validation
    parameters are restored when training stops.
    """
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    n = len(y)
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    if len(tr_idx) == 0:
        raise DataError("no training rows")
    tr_in, tr_y = _take(inputs, tr_idx), y[tr_idx]
    va_in, va_y = (_take(inputs, val_idx), y[val_idx]) if n_val else (None, None)
    params = model.params
    opt = Adam(params, cfg.step_size) if cfg.optimizer == "adam" else SGD(params, cfg.step_size)
    best_val, best_params, stale = np.inf, None, 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(tr_y))
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            _, grads = gradient(model, _take(tr_in, b), tr_y[b])
            opt.step(params, grads)
        train_loss = loss_value(model.loss, model.predict(tr_in), tr_y)
        if not np.isfinite(train_loss):
            raise ModelError(f"training diverged at epoch {epoch}; try a smaller step size")
        val_loss = loss_value(model.loss, model.predict(va_in), va_y) if n_val else float("nan")
        history.append((epoch, train_loss, val_loss))
        if n_val and cfg.patience is not None:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_params is not None:
        for k, v in params.items():
            v[...] = best_params[k]
    model.history = history
    return model


def fit_fnn(X, y, cfg=TrainConfig(), hidden=(32, 32, 32, 32), hidden_activation="tanh"):
    """Train the feed-forward network (mean-squared loss) on scaled data."""
    X = np.asarray(X, dtype=float)
    model = FNNModel(X.shape[1], hidden, hidden_activation, seed=cfg.seed, loss="mse")
    return train(model, X, y, cfg)


def fit_hybrid(static, seq, y, branch="lstm", cfg=TrainConfig(), **arch):
    """Train a sequence/static hybrid (mean-absolute loss) on scaled data."""
    static = np.asarray(static, dtype=float)
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 3:
        raise DataError("sequences must have shape (rows, steps, features)")
    model = HybridModel(static.shape[1], seq.shape[1], branch, seq.shape[2], seed=cfg.seed,
                        loss="mae", **arch)
    return train(model, (static, seq), y, cfg)


def history_table(model):
    """Loss history as delimited text: ``epoch,train_loss,val_loss``."""
    lines = ["epoch,train_loss,val_loss"]
    for epoch, tr, va in model.history:
        lines.append(f"{epoch},{tr!r},{va!r}")
    return "\n".join(lines) + "\n"
