from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def error_rate(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"predictions {predictions.shape} and labels {labels.shape} differ in shape")
    if labels.size == 0:
        raise UndefinedMetricError("error rate of an empty set")
    return float(np.mean(predictions != labels))


def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals P(score of a random positive > score of a random negative), with
    ties counted as 1/2. Average ranks handle the ties.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def qualifying_mask(per_modality_predictions, labels) -> np.ndarray:
    """Samples that at least one single-modality model classifies correctly."""
    P = np.atleast_2d(np.asarray(per_modality_predictions))
    return np.any(P == np.asarray(labels)[None, :], axis=0)


def over_learn_error(predictions, per_modality_predictions, labels) -> float:
    """Error of the multimodal model restricted to samples some single modality gets right."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    mask = qualifying_mask(per_modality_predictions, labels)
    if not mask.any():
        raise UndefinedMetricError("no sample is predicted correctly by any single modality")
    return float(np.mean(predictions[mask] != labels[mask]))
