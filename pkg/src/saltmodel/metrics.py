"""Evaluation metrics: likelihoods, explained variance, tensor error, segmentation."""

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import ShapeError

MAX_ALIGN_STATES = 10


@dataclass
class EvalReport:
    per_frame_loglik: float = None
    explained_variance: float = None
    tensor_mse: float = None
    seg_accuracy: float = None
    confusion: list = None
    permutation: list = None

    def to_dict(self):
        return asdict(self)


def explained_variance(pred, truth):
    """``1 - ||truth - pred||^2 / ||truth - mean(truth)||^2`` over all entries."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    centered = truth - truth.mean(axis=0)
    denom = float(np.sum(centered ** 2))
    if denom == 0.0:
        raise ValueError("explained variance is undefined for a constant series")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / denom


def tensor_mse(estimated, truth, perm=None):
    """Mean squared error between stacked ``(H, N, N, L)`` tensors.

    ``perm[i]`` is the estimated state matched to true state ``i``.
    """
    est = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.ndim == 3:
        est = est[None]
    if truth.ndim == 3:
        truth = truth[None]
    if perm is None:
        perm = np.arange(len(truth))
    est = est[np.asarray(perm)]
    if est.shape != truth.shape:
        raise ShapeError(f"estimated {est.shape} and true {truth.shape} tensors differ")
    return float(np.mean((est - truth) ** 2))


def align_states(confusion):
    """Permutation maximizing matched counts, by exhaustive search.

    ``confusion[i, j]`` counts frames with true label ``i`` and predicted
    label ``j``; the result maps true label ``i`` to predicted label ``perm[i]``.
    Ties resolve to the lexicographically smallest permutation.
    """
    confusion = np.asarray(confusion)
    H = confusion.shape[0]
    if confusion.shape != (H, H):
        raise ShapeError("confusion matrix must be square")
    if H > MAX_ALIGN_STATES:
        raise ValueError(f"exhaustive alignment supports at most {MAX_ALIGN_STATES} states")
    rows = np.arange(H)
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(H)):
        score = confusion[rows, perm].sum()
        if score > best_score:
            best, best_score = perm, score
    return np.array(best)


def confusion_matrix(pred, truth, H=None):
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ShapeError(f"{len(pred)} predicted labels vs {len(truth)} true labels")
    H = H or int(max(pred.max(initial=0), truth.max(initial=0))) + 1
    conf = np.zeros((H, H), dtype=int)
    np.add.at(conf, (truth, pred), 1)
    return conf


def segmentation_accuracy(pred_states, true_states, H=None):
    """Accuracy after the best relabeling.

    Returns:
        ``(accuracy, confusion)`` with rows indexed by the true labels. The
        relabeling itself is ``align_states(confusion)``.
    """
    conf = confusion_matrix(pred_states, true_states, H)
    perm = align_states(conf)
    acc = conf[np.arange(len(perm)), perm].sum() / max(conf.sum(), 1)
    return float(acc), conf


def per_frame_loglik(log_marginal, n_frames):
    return float(log_marginal) / n_frames
