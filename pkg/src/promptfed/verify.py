"""Built-in oracle suite behind ``promptfed verify``."""

import time
from dataclasses import replace

import numpy as np

from . import oracles
from .datasets import PartitionSpec, dirichlet_partition, synth_task
from .linalg import sym_eigen
from .model import Backbone, batch_loss, prompt_gradient
from .optim import (
    AdamHyper,
    AdamState,
    DeviceUpdate,
    OptimHyper,
    ServerOptState,
    adam_step,
    make_optimizer,
    server_round,
)


def check_adam(adam_eps=None, steps=100, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    grads = rng.normal(size=(steps, dim))
    w0 = rng.normal(size=dim)
    hyper = AdamHyper()
    if adam_eps is not None:
        hyper = replace(hyper, eps=adam_eps)
    ref = np.array(oracles.adam_reference(w0, grads, AdamHyper.lr, AdamHyper.beta1, AdamHyper.beta2, AdamHyper.eps))
    w, s = w0, AdamState.fresh(dim, hyper)
    err = 0.0
    for t in range(steps):
        w, s = adam_step(w, s, grads[t])
        err = max(err, float(np.max(np.abs(w - ref[t]))))
    return err <= 1e-12, f"max deviation {err:.2e} over {steps} steps"


def check_eigensolver(count=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        a = rng.normal(size=(3, 3))
        a = a + a.T
        vals = sym_eigen(a).values
        roots = oracles.cubic_real_roots(*oracles.charpoly3(a.tolist()))
        worst = max(worst, float(np.max(np.abs(vals - roots))),
                    abs(vals.sum() - np.trace(a)), abs(np.prod(vals) - oracles.det3(a.tolist())))
    return worst <= 1e-8, f"worst error {worst:.2e} over {count} matrices"


def check_gradient(seed=0):
    b = Backbone.init(4, 6, 5, 3, 3, seed)
    rng = np.random.default_rng(seed)
    p = rng.normal(scale=0.5, size=(4, 3))
    data = synth_task(seed, 3, 5, 30)
    batch = data.subset(np.arange(8))
    g = prompt_gradient(b, p, batch)
    fd = oracles.central_difference_grad(lambda q: batch_loss(b, q, batch), p, 1e-5)
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)
    worst = float(np.max(rel))
    return worst <= 1e-5, f"worst relative error {worst:.2e} over {g.size} coordinates"


def check_control_variates(rounds=50, devices=6, dim=7, seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.integers(5, 50, size=devices)
    opt = make_optimizer("fedpeptao")
    hyper = OptimHyper()
    st = ServerOptState(dim)
    w = np.zeros(dim)
    ids = list(range(devices))
    worst = 0.0
    for _ in range(rounds):
        ups = [DeviceUpdate(i, rng.normal(scale=0.1, size=dim), int(rng.integers(1, 10)), int(counts[i]))
               for i in ids]
        w, st = server_round(st, ups, ids, devices, w, opt, hyper)
        avg = np.average(np.stack([st.c_per_device[i] for i in ids]), axis=0, weights=counts)
        worst = max(worst, float(np.max(np.abs(avg - st.c_global))))
    return worst <= 1e-12, f"max |c_g - avg c_i| {worst:.2e} over {rounds} rounds"


def check_partition(seed=0):
    d = synth_task(seed, 4, 8, 800)
    shards = dirichlet_partition(d, PartitionSpec(20, 0.5, 5.0, seed))
    idx = np.sort(np.concatenate([s.indices for s in shards]))
    sizes_ok = sum(len(s.train) + len(s.holdout) for s in shards) == len(d)
    ok = sizes_ok and np.array_equal(idx, np.arange(len(d)))
    return bool(ok), f"{len(shards)} shards cover {len(idx)} of {len(d)} examples"


CHECKS = [
    ("adam_trace", check_adam),
    ("eigensolver_charpoly", check_eigensolver),
    ("gradient_finite_difference", check_gradient),
    ("control_variate_bookkeeping", check_control_variates),
    ("partition_conservation", check_partition),
]


def run_checks(adam_eps=None, out=print):
    """Run every check, print one line each, return True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = fn(adam_eps=adam_eps) if name == "adam_trace" else fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {exc!r}"
        elapsed = time.perf_counter() - start
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({elapsed:.2f}s)")
        all_ok &= ok
    return all_ok
