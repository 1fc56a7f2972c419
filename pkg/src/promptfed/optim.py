"""Device-side local optimisers and the server-side momentum/control-variate round."""

from dataclasses import dataclass, field, replace
from typing import Dict, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, MissingUpdate, UnknownConfig
from .model import Backbone, run_batch

DEVICE_RULES = ("sgd", "momentum", "adam")
SERVER_RULES = ("average", "momentum")
PSEUDO_GRAD_MODES = ("lagged_diff", "neg_delta")


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    hyper: AdamHyper = AdamHyper()

    @classmethod
    def fresh(cls, dim, hyper=AdamHyper()):
        return cls(np.zeros(dim), np.zeros(dim), 0, hyper)

    def is_fresh(self):
        return self.t == 0 and not self.m.any() and not self.v.any()


def adam_step(w, s: AdamState, g):
    """One bias-corrected Adam step. Inputs are left untouched."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape or w.shape != s.m.shape:
        raise DimensionMismatch(f"w {w.shape}, g {g.shape}, state {s.m.shape}")
    h = s.hyper
    t = s.t + 1
    m = h.beta1 * s.m + (1.0 - h.beta1) * g
    m_hat = m / (1.0 - h.beta1 ** t)
    v = h.beta2 * s.v + (1.0 - h.beta2) * (g * g)
    v_hat = v / (1.0 - h.beta2 ** t)
    w_new = w - h.lr * m_hat / (np.sqrt(v_hat) + h.eps)
    return w_new, AdamState(m, v, t, h)


@dataclass(frozen=True)
class OptimizerConfig:
    name: str
    device_rule: str
    server_rule: str
    control_variates: bool


OPTIMIZERS = {
    "fedavg": OptimizerConfig("fedavg", "sgd", "average", False),
    "momd": OptimizerConfig("momd", "momentum", "average", False),
    "moms": OptimizerConfig("moms", "sgd", "momentum", False),
    "moms_con": OptimizerConfig("moms_con", "sgd", "momentum", True),
    "adamd": OptimizerConfig("adamd", "adam", "average", False),
    "moms_adamd": OptimizerConfig("moms_adamd", "adam", "momentum", False),
    "fedpeptao": OptimizerConfig("fedpeptao", "adam", "momentum", True),
}


def make_optimizer(name) -> OptimizerConfig:
    try:
        return OPTIMIZERS[name]
    except KeyError:
        raise UnknownConfig(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None


@dataclass(frozen=True)
class OptimHyper:
    """Step sizes and decay rates shared by every optimizer configuration."""

    adam: AdamHyper = AdamHyper()
    sgd_lr: float = 0.1
    device_momentum: float = 0.9
    server_lr: float = 1e-3
    server_momentum: float = 0.9
    pseudo_grad_mode: str = "lagged_diff"
    batch_size: int = 32

    def __post_init__(self):
        if self.pseudo_grad_mode not in PSEUDO_GRAD_MODES:
            raise UnknownConfig(f"pseudo_grad_mode must be one of {PSEUDO_GRAD_MODES}")

    def device_step_size(self, rule):
        return self.adam.lr if rule == "adam" else self.sgd_lr


@dataclass
class DeviceUpdate:
    device_id: int
    delta: np.ndarray
    steps_taken: int
    sample_count: int


def sync_coords(layers, prompt_dim):
    """Flat indices of the prompt entries belonging to ``layers``."""
    layers = np.asarray(layers, dtype=np.int64)
    return (layers[:, None] * prompt_dim + np.arange(prompt_dim)[None, :]).ravel()


def local_update(b: Backbone, prompts, sync_layers, shard, steps, rule, hyper: OptimHyper, rng,
                 device_id=0, adam_state=None):
    """Run ``steps`` mini-batch steps on every prompt of one device.

    ``prompts`` is the device's ``(L, d_p)`` array and is overwritten with the
    trained values (its non-synchronised rows are device-private). The
    returned delta covers the synchronised layers only.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = len(shard.y)
    if n == 0:
        raise EmptyBatch(f"device {device_id} has an empty shard")
    shape = prompts.shape
    w0 = prompts.ravel().copy()
    w = w0.copy()
    if rule == "adam":
        state = adam_state if adam_state is not None else AdamState.fresh(w.size, hyper.adam)
        assert state.is_fresh(), "Adam moments must start each round at zero"
    elif rule == "momentum":
        buf = np.zeros_like(w)
    elif rule != "sgd":
        raise UnknownConfig(f"unknown device rule {rule!r}")
    bs = min(hyper.batch_size, n)
    for _ in range(steps):
        idx = rng.choice(n, size=bs, replace=False) if bs < n else np.arange(n)
        g = run_batch(b, w.reshape(shape), shard.X[idx], shard.y[idx])[1].ravel()
        if rule == "adam":
            w, state = adam_step(w, state, g)
        elif rule == "momentum":
            buf = hyper.device_momentum * buf + g
            w = w - hyper.sgd_lr * buf
        else:
            w = w - hyper.sgd_lr * g
    prompts[...] = w.reshape(shape)
    coords = sync_coords(sync_layers, shape[1])
    return DeviceUpdate(device_id, w[coords] - w0[coords], steps, n)


@dataclass
class ServerOptState:
    dim: int
    c_per_device: Dict[int, np.ndarray] = field(default_factory=dict)
    c_global: np.ndarray = None
    momentum: np.ndarray = None
    prev_delta: np.ndarray = None
    round: int = 0

    def __post_init__(self):
        for name in ("c_global", "momentum", "prev_delta"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.dim))

    def variate(self, device_id):
        return self.c_per_device.get(device_id, np.zeros(self.dim))

    def project(self, coords):
        """Keep only the entries at ``coords`` (used when the synchronised set shrinks)."""
        coords = np.asarray(coords, dtype=np.int64)
        return ServerOptState(
            len(coords),
            {k: v[coords].copy() for k, v in self.c_per_device.items()},
            self.c_global[coords].copy(),
            self.momentum[coords].copy(),
            self.prev_delta[coords].copy(),
            self.round,
        )

    def copy(self):
        return replace(self, c_per_device={k: v.copy() for k, v in self.c_per_device.items()},
                       c_global=self.c_global.copy(), momentum=self.momentum.copy(),
                       prev_delta=self.prev_delta.copy())


def server_round(st: ServerOptState, updates: Sequence[DeviceUpdate], sampled, total_devices, global_w,
                 opt: OptimizerConfig, hyper: OptimHyper):
    """Aggregate one round of device deltas; returns ``(new_global_w, new_state)``.

    Aggregations are weighted by each sampled device's sample count. The
    ``momentum`` server rule keeps one control variate per device plus a
    global one; with ``control_variates`` off those terms stay zero.
    """
    sampled = [int(i) for i in sampled]
    by_id = {u.device_id: u for u in updates}
    missing = [i for i in sampled if i not in by_id]
    if missing or len(by_id) != len(sampled):
        raise MissingUpdate(f"updates do not match sampled devices (missing {missing})")
    global_w = np.asarray(global_w, dtype=np.float64)
    if global_w.shape != (st.dim,):
        raise DimensionMismatch(f"global vector has shape {global_w.shape}, state dim {st.dim}")
    ups = [by_id[i] for i in sampled]
    for u in ups:
        if u.delta.shape != (st.dim,):
            raise DimensionMismatch(f"device {u.device_id} sent {u.delta.shape}, expected ({st.dim},)")
    weights = np.array([u.sample_count for u in ups], dtype=np.float64)
    weights /= weights.sum()
    deltas = np.stack([u.delta for u in ups])
    agg_delta = weights @ deltas

    new = st.copy()
    new.round = st.round + 1
    if opt.server_rule == "average":
        new.prev_delta = agg_delta
        return global_w + agg_delta, new
    if opt.server_rule != "momentum":
        raise UnknownConfig(f"unknown server rule {opt.server_rule!r}")

    alpha = hyper.device_step_size(opt.device_rule)
    if opt.control_variates:
        dc = np.zeros(st.dim)
        for wgt, u in zip(weights, ups):
            old = st.variate(u.device_id)
            c_i = old - st.c_global - u.delta / (u.steps_taken * alpha)
            new.c_per_device[u.device_id] = c_i
            dc += wgt * (c_i - old)
        new.c_global = st.c_global + dc * (len(sampled) / total_devices)

    if hyper.pseudo_grad_mode == "lagged_diff":
        g_g = st.prev_delta - agg_delta
    else:
        g_g = -agg_delta
    beta, eta = hyper.server_momentum, hyper.server_lr
    m_sum = np.zeros(st.dim)
    w_sum = np.zeros(st.dim)
    for wgt, u in zip(weights, ups):
        m_i = beta * st.momentum + (1.0 - beta) * g_g
        if opt.control_variates:
            m_i = m_i + new.c_global - new.c_per_device[u.device_id]
        m_sum += wgt * m_i
        w_sum += wgt * (global_w - eta * m_i)
    new.momentum = m_sum
    new.prev_delta = agg_delta
    return w_sum, new
