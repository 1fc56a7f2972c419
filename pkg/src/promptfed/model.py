"""Frozen tanh-chain backbone with one trainable prompt vector per layer.

Layer ``l`` computes ``h_l = tanh(W_l h_{l-1} + U_l p_l)`` with ``h_0 = x``;
the head is ``logits = V h_L``. Only the prompts ``p_l`` are trainable.
Prompt states are plain ``(num_layers, prompt_dim)`` float64 arrays.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._accel import HAVE_NUMBA, jit
from .errors import EmptyBatch, ShapeMismatch


class Example(NamedTuple):
    features: np.ndarray
    label: int


def _glorot(rng, fan_out, fan_in):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Backbone:
    first: np.ndarray  # (d_h, d_x)
    rest: np.ndarray  # (L-1, d_h, d_h)
    prompt_maps: np.ndarray  # (L, d_h, d_p)
    head: np.ndarray  # (C, d_h)
    init_seed: object = None

    def __post_init__(self):
        for name in ("first", "rest", "prompt_maps", "head"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        d_h = self.first.shape[0]
        L = self.prompt_maps.shape[0]
        if self.rest.shape != (L - 1, d_h, d_h):
            raise ShapeMismatch(f"hidden weights have shape {self.rest.shape}, expected {(L - 1, d_h, d_h)}")
        if self.prompt_maps.shape[1] != d_h:
            raise ShapeMismatch("prompt maps must output hidden_dim")
        if self.head.shape[1] != d_h:
            raise ShapeMismatch("head must read hidden_dim")

    @classmethod
    def init(cls, num_layers, hidden_dim, input_dim, prompt_dim, num_classes, seed):
        rng = np.random.default_rng(seed)
        first = _glorot(rng, hidden_dim, input_dim)
        rest = np.stack([_glorot(rng, hidden_dim, hidden_dim) for _ in range(num_layers - 1)]) \
            if num_layers > 1 else np.zeros((0, hidden_dim, hidden_dim))
        maps = np.stack([_glorot(rng, hidden_dim, prompt_dim) for _ in range(num_layers)])
        head = _glorot(rng, num_classes, hidden_dim)
        return cls(first, rest, maps, head, seed)

    @classmethod
    def from_weights(cls, weights, prompt_maps, head):
        """Build from explicit per-layer matrices (``weights[0]`` maps the input)."""
        d_h = np.shape(weights[0])[0]
        rest = np.array(weights[1:], dtype=np.float64).reshape(len(weights) - 1, d_h, d_h)
        return cls(np.asarray(weights[0], dtype=np.float64), rest,
                   np.asarray(prompt_maps, dtype=np.float64), np.asarray(head, dtype=np.float64))

    @property
    def num_layers(self):
        return self.prompt_maps.shape[0]

    @property
    def hidden_dim(self):
        return self.first.shape[0]

    @property
    def input_dim(self):
        return self.first.shape[1]

    @property
    def prompt_dim(self):
        return self.prompt_maps.shape[2]

    @property
    def num_classes(self):
        return self.head.shape[0]

    @property
    def num_prompt_params(self):
        return self.num_layers * self.prompt_dim

    def zero_prompts(self):
        return np.zeros((self.num_layers, self.prompt_dim))

    def fingerprint(self):
        return b"".join(a.tobytes() for a in (self.first, self.rest, self.prompt_maps, self.head))


def _check_prompts(b, p):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (b.num_layers, b.prompt_dim):
        raise ShapeMismatch(f"prompts have shape {p.shape}, expected {(b.num_layers, b.prompt_dim)}")
    return p


def _as_arrays(b, data):
    if hasattr(data, "X") and hasattr(data, "y"):
        X, y = data.X, data.y
    else:
        data = list(data)
        if not data:
            raise EmptyBatch("empty batch")
        X = np.array([ex.features for ex in data], dtype=np.float64)
        y = np.array([ex.label for ex in data], dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if len(y) == 0:
        raise EmptyBatch("empty batch")
    if X.ndim != 2 or X.shape[1] != b.input_dim:
        raise ShapeMismatch(f"features have shape {X.shape}, expected (n, {b.input_dim})")
    return X, y


# ---------------------------------------------------------------------------
# batch kernels: numpy (vectorised over samples) and numba (loop per sample)


def _cross_entropy_rows(logits, y):
    top = np.argmax(logits, axis=1)
    rows = np.arange(len(y))
    s = logits - logits[rows, top][:, None]
    e = np.exp(s)
    e[rows, top] = 0.0
    return np.log1p(e.sum(axis=1)) - s[rows, y]


def _batch_numpy(first, rest, maps, head, prompts, X, y, want_grad):
    n = X.shape[0]
    L = maps.shape[0]
    hs = np.empty((n, L, first.shape[0]))
    h = X
    for l in range(L):
        w = first if l == 0 else rest[l - 1]
        h = np.tanh(h @ w.T + maps[l] @ prompts[l])
        hs[:, l] = h
    logits = h @ head.T
    losses = _cross_entropy_rows(logits, y)
    grad = np.zeros_like(prompts)
    if want_grad:
        z = logits - logits.max(axis=1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=1, keepdims=True)
        prob[np.arange(n), y] -= 1.0
        dh = (prob / n) @ head
        for l in range(L - 1, -1, -1):
            dz = dh * (1.0 - hs[:, l] ** 2)
            grad[l] = (dz @ maps[l]).sum(axis=0)
            if l > 0:
                dh = dz @ rest[l - 1]
    return losses, grad, hs, logits


def _batch_loops(first, rest, maps, head, prompts, X, y, want_grad):
    n, d_x = X.shape
    L, d_h, d_p = maps.shape
    C = head.shape[0]
    hs = np.empty((n, L, d_h))
    logits = np.empty((n, C))
    losses = np.empty(n)
    grad = np.zeros((L, d_p))
    inj = np.zeros((L, d_h))
    for l in range(L):
        for i in range(d_h):
            s = 0.0
            for k in range(d_p):
                s += maps[l, i, k] * prompts[l, k]
            inj[l, i] = s
    dh = np.empty(d_h)
    dz = np.empty(d_h)
    prob = np.empty(C)
    for j in range(n):
        for i in range(d_h):
            s = inj[0, i]
            for k in range(d_x):
                s += first[i, k] * X[j, k]
            hs[j, 0, i] = np.tanh(s)
        for l in range(1, L):
            for i in range(d_h):
                s = inj[l, i]
                for k in range(d_h):
                    s += rest[l - 1, i, k] * hs[j, l - 1, k]
                hs[j, l, i] = np.tanh(s)
        top = 0
        for c in range(C):
            s = 0.0
            for k in range(d_h):
                s += head[c, k] * hs[j, L - 1, k]
            logits[j, c] = s
            if s > logits[j, top]:
                top = c
        mx = logits[j, top]
        rest_sum = 0.0
        for c in range(C):
            prob[c] = np.exp(logits[j, c] - mx)
            if c != top:
                rest_sum += prob[c]
        losses[j] = np.log1p(rest_sum) - (logits[j, y[j]] - mx)
        if not want_grad:
            continue
        total = 1.0 + rest_sum
        for c in range(C):
            prob[c] /= total
        prob[y[j]] -= 1.0
        for k in range(d_h):
            s = 0.0
            for c in range(C):
                s += prob[c] * head[c, k]
            dh[k] = s / n
        for l in range(L - 1, -1, -1):
            for i in range(d_h):
                dz[i] = dh[i] * (1.0 - hs[j, l, i] * hs[j, l, i])
            for k in range(d_p):
                s = 0.0
                for i in range(d_h):
                    s += dz[i] * maps[l, i, k]
                grad[l, k] += s
            if l > 0:
                for k in range(d_h):
                    s = 0.0
                    for i in range(d_h):
                        s += dz[i] * rest[l - 1, i, k]
                    dh[k] = s
    return losses, grad, hs, logits


_batch_jit = jit(_batch_loops)

# above this batch size the BLAS-backed numpy path wins (see benchmarks/)
NUMBA_MAX_BATCH = 32


def run_batch(b, p, X, y, want_grad=True, use_numba=None):
    """Forward (and optionally backward) pass over a batch.

    Returns per-sample losses, the gradient of the *mean* loss with respect
    to the prompts, hidden states ``(n, L, d_h)`` and logits ``(n, C)``.
    With ``use_numba=None`` the compiled kernel is used for small batches only.
    """
    if use_numba is None:
        use_numba = HAVE_NUMBA and len(y) <= NUMBA_MAX_BATCH
    args = (b.first, b.rest, b.prompt_maps, b.head, np.ascontiguousarray(p, dtype=np.float64), X, y, want_grad)
    if use_numba and _batch_jit is not None:
        return _batch_jit(*args)
    return _batch_numpy(*args)


# ---------------------------------------------------------------------------
# public operations


def forward(b: Backbone, p, x):
    """Logits and per-layer hidden states ``(L, d_h)`` for one input."""
    p = _check_prompts(b, p)
    feats = x.features if isinstance(x, Example) else x
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape != (b.input_dim,):
        raise ShapeMismatch(f"input has shape {feats.shape}, expected ({b.input_dim},)")
    _, _, hs, logits = run_batch(b, p, feats[None, :], np.zeros(1, dtype=np.int64), want_grad=False)
    return logits[0], hs[0]


def loss(logits, label):
    """Softmax cross-entropy, stable for confidently-correct logits."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} outside [0, {z.size})")
    return float(_cross_entropy_rows(z[None, :], np.array([label]))[0])


def prompt_gradient(b: Backbone, p, batch):
    """Gradient of the mean batch loss with respect to every prompt vector."""
    p = _check_prompts(b, p)
    X, y = _as_arrays(b, batch)
    _, grad, _, _ = run_batch(b, p, X, y)
    return grad


def batch_loss(b: Backbone, p, batch):
    p = _check_prompts(b, p)
    X, y = _as_arrays(b, batch)
    losses, _, _, _ = run_batch(b, p, X, y, want_grad=False)
    return float(losses.mean())


def hidden_states(b: Backbone, p, batch):
    p = _check_prompts(b, p)
    X, y = _as_arrays(b, batch)
    return run_batch(b, p, X, y, want_grad=False)[2]


def predict(b: Backbone, p, data):
    p = _check_prompts(b, p)
    X, y = _as_arrays(b, data)
    losses, _, _, logits = run_batch(b, p, X, y, want_grad=False)
    return np.argmax(logits, axis=1), losses


def evaluate(b: Backbone, p, data):
    """Accuracy (argmax, ties to the lowest class) and mean loss."""
    _, y = _as_arrays(b, data)
    pred, losses = predict(b, p, data)
    return float(np.mean(pred == y)), float(losses.mean())
