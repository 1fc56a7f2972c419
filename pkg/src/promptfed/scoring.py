"""Per-layer importance scores from hidden-state similarity spectra."""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DimensionMismatch, EmptyBatch, EmptyInput, ZeroTotalSamples
from .model import _as_arrays, _check_prompts, run_batch


@dataclass(frozen=True)
class ScoringConfig:
    epsilon: float = 1e-5
    score_batch_size: int = 32

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.score_batch_size < 1:
            raise ValueError("score_batch_size must be positive")


@dataclass(frozen=True)
class LayerScores:
    scores: np.ndarray
    sample_count: int


def kernel_matrix(h):
    """Layer-by-layer cosine similarity of one sample's hidden states ``(L, d_h)``."""
    return linalg.cosine_gram(h)


def assign_eigenvalues(values, vectors):
    """Give each layer one eigenvalue.

    Eigenpairs are visited from the largest eigenvalue down; each goes to the
    free layer where its eigenvector has the largest magnitude, ties to the
    lowest layer index.
    """
    L = len(values)
    out = np.empty(L)
    free = np.ones(L, dtype=bool)
    mags = np.abs(vectors)
    for k in range(L - 1, -1, -1):
        cand = np.where(free, mags[:, k], -1.0)
        layer = int(np.argmax(cand))
        out[layer] = values[k]
        free[layer] = False
    return out


def sample_layer_eigenvalues(k):
    spec = linalg.sym_eigen(k, want_vectors=True)
    return assign_eigenvalues(spec.values, spec.vectors)


def score_terms(lam, epsilon):
    lam = np.maximum(np.asarray(lam, dtype=np.float64), 0.0) + epsilon
    return np.log(lam) + 1.0 / lam


def scores_from_hidden(hs, epsilon):
    """Mean score per layer over a stack of per-sample hidden states ``(n, L, d_h)``."""
    if len(hs) == 0:
        raise EmptyBatch("no samples to score")
    terms = np.array([score_terms(sample_layer_eigenvalues(kernel_matrix(h)), epsilon) for h in hs])
    return terms.mean(axis=0)


def local_layer_scores(b, p, data, cfg: ScoringConfig = ScoringConfig()):
    p = _check_prompts(b, p)
    X, y = _as_arrays(b, data)
    hs = run_batch(b, p, X, y, want_grad=False)[2]
    return LayerScores(scores_from_hidden(hs, cfg.epsilon), len(y))


def aggregate_scores(locals_):
    if not locals_:
        raise EmptyInput("no device scores to aggregate")
    if len({len(s.scores) for s in locals_}) != 1:
        raise DimensionMismatch("devices report different layer counts")
    weights = [s.sample_count for s in locals_]
    if sum(weights) == 0:
        raise ZeroTotalSamples("devices report zero samples in total")
    return linalg.weighted_average([s.scores for s in locals_], weights)
