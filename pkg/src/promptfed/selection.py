"""Lossless layer selection from the Hessian eigen-gap rule and layer scores."""

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from . import linalg
from .errors import DegeneratePair, DimensionTooLarge
from .model import Backbone, _as_arrays, _check_prompts, run_batch
from .scoring import LayerScores, ScoringConfig, aggregate_scores, local_layer_scores

MAX_HESSIAN_DIM = 512


@dataclass(frozen=True)
class SelectionConfig:
    fd_step: float = 1e-4
    lipschitz_trials: int = 64
    min_radius: float = 1e-3
    seed: int = 0
    scoring: ScoringConfig = ScoringConfig()


@dataclass
class SelectionDiagnostics:
    hessian_eigs: np.ndarray
    lipschitz: float
    gap_index: int
    ratio: float
    scores: np.ndarray = field(default=None)
    device_id: int = -1

    @property
    def num_params(self):
        return len(self.hessian_eigs)

    def to_record(self):
        return {
            "device": self.device_id,
            "ratio": self.ratio,
            "k": self.gap_index,
            "K": self.num_params,
            "lipschitz": self.lipschitz,
            "scores": None if self.scores is None else [float(s) for s in self.scores],
        }


@dataclass
class SelectionResult:
    selected_layers: List[int]
    global_ratio: float
    selected_param_fraction: float
    global_scores: np.ndarray = None
    diagnostics: List[SelectionDiagnostics] = field(default_factory=list)

    def to_record(self):
        return {
            "selected_layers": list(self.selected_layers),
            "global_ratio": self.global_ratio,
            "selected_param_fraction": self.selected_param_fraction,
            "global_scores": None if self.global_scores is None else [float(s) for s in self.global_scores],
            "devices": [d.to_record() for d in self.diagnostics],
        }


def hessian_from_gradient(grad_fn: Callable, w, step=1e-4, return_raw=False):
    """Central differences of an analytic gradient, then symmetrised.

    ``grad_fn`` maps a flat parameter vector to a flat gradient of the same
    length. With ``return_raw`` the unsymmetrised matrix is returned as well.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    w = np.asarray(w, dtype=np.float64).ravel()
    K = w.size
    if K > MAX_HESSIAN_DIM:
        raise DimensionTooLarge(f"{K} parameters exceeds the {MAX_HESSIAN_DIM} limit")
    raw = np.empty((K, K))
    for j in range(K):
        e = np.zeros(K)
        e[j] = step
        raw[:, j] = (grad_fn(w + e) - grad_fn(w - e)) / (2.0 * step)
    H = 0.5 * (raw + raw.T)
    return (H, raw) if return_raw else H


def model_grad_fn(b: Backbone, batch):
    X, y = _as_arrays(b, batch)
    shape = (b.num_layers, b.prompt_dim)

    def grad(w):
        return run_batch(b, w.reshape(shape), X, y)[1].ravel()

    return grad


def finite_diff_hessian(b: Backbone, p, batch, step=1e-4, return_raw=False):
    p = _check_prompts(b, p)
    return hessian_from_gradient(model_grad_fn(b, batch), p.ravel(), step, return_raw)


def _ball_point(rng, dim, radius):
    d = rng.normal(size=dim)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / dim)


def lipschitz_estimate(grad_fn: Callable, H, w, trials=64, radius=1.0, seed=0, return_history=False):
    """Sampled Lipschitz constant of the linearisation residual.

    The residual is ``B(d) = H d - grad(w + d)``; the estimate is the largest
    ``|B(a) - B(b)| / |a - b|`` over ``trials`` random pairs drawn from the
    ball of the given radius around zero.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    H = np.asarray(H, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)

    def residual(d):
        return H @ d - grad_fn(w + d)

    best = 0.0
    history = []
    attempts = 0
    done = 0
    while done < trials:
        attempts += 1
        if attempts > 10 * trials:
            raise DegeneratePair("sampled pairs keep coinciding")
        a = _ball_point(rng, w.size, radius)
        c = _ball_point(rng, w.size, radius)
        gap = np.linalg.norm(a - c)
        if gap == 0.0:
            continue
        best = max(best, float(np.linalg.norm(residual(a) - residual(c)) / gap))
        history.append(best)
        done += 1
    return (best, history) if return_history else best


def first_gap_index(eigs, lipschitz):
    """Smallest ``k >= 1`` with ``eigs[k] - eigs[k-1] > 4 * lipschitz``; 0 if none."""
    gaps = np.diff(np.asarray(eigs, dtype=np.float64))
    hits = np.flatnonzero(gaps > 4.0 * lipschitz)
    return int(hits[0]) + 1 if hits.size else 0


def retention_ratio(hessian_eigs, lipschitz):
    eigs = np.asarray(hessian_eigs, dtype=np.float64)
    if np.any(np.diff(eigs) < 0):
        raise ValueError("eigenvalues must be sorted ascending")
    K = eigs.size
    k = first_gap_index(eigs, lipschitz)
    return SelectionDiagnostics(eigs, float(lipschitz), k, (K - k) / K)


def select_layers(global_scores, global_ratio, per_layer_param_counts):
    """Add layers by descending score until their parameter share reaches the ratio."""
    scores = np.asarray(global_scores, dtype=np.float64)
    counts = np.asarray(per_layer_param_counts, dtype=np.int64)
    if not 0.0 <= global_ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if counts.shape != scores.shape or np.any(counts <= 0):
        raise ValueError("need one positive parameter count per layer")
    total = int(counts.sum())
    # stable sort on -score keeps lower layer index first among ties
    order = np.argsort(-scores, kind="stable")
    chosen, taken = [], 0
    for layer in order:
        if taken / total >= global_ratio:
            break
        chosen.append(int(layer))
        taken += int(counts[layer])
    return SelectionResult(chosen, float(global_ratio), taken / total, scores)


@dataclass
class DeviceView:
    backbone: Backbone
    prompts: np.ndarray
    data: object  # fixed scoring batch
    device_id: int = -1


def device_diagnostics(view: DeviceView, initial_prompts, cfg: SelectionConfig):
    b = view.backbone
    p = _check_prompts(b, view.prompts)
    delta = np.asarray(initial_prompts, dtype=np.float64).ravel() - p.ravel()
    grad = model_grad_fn(b, view.data)
    H = hessian_from_gradient(grad, p.ravel(), cfg.fd_step)
    eigs = linalg.sym_eigen(H).values
    radius = max(float(np.linalg.norm(delta)), cfg.min_radius)
    lip = lipschitz_estimate(grad, H, p.ravel(), cfg.lipschitz_trials, radius,
                             seed=(cfg.seed, max(view.device_id, 0)))
    diag = retention_ratio(eigs, lip)
    local = local_layer_scores(b, p, view.data, cfg.scoring)
    diag.scores = local.scores
    diag.device_id = view.device_id
    return diag, local


def run_selection(devices: Sequence[DeviceView], initial_prompts, cfg: SelectionConfig = SelectionConfig()):
    """Per-device eigen-gap ratios and layer scores, aggregated by sample count."""
    diags, locals_ = [], []
    for view in devices:
        d, s = device_diagnostics(view, initial_prompts, cfg)
        diags.append(d)
        locals_.append(s)
    weights = np.array([s.sample_count for s in locals_], dtype=np.float64)
    ratio = float(linalg.weighted_average([[d.ratio] for d in diags], weights)[0])
    ratio = min(max(ratio, 0.0), 1.0)
    scores = aggregate_scores(locals_)
    b = devices[0].backbone
    result = select_layers(scores, ratio, [b.prompt_dim] * b.num_layers)
    result.diagnostics = diags
    return result

