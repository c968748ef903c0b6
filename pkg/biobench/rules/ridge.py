from dataclasses import dataclass

import numpy as np

from biobench.errors import ConfigurationError, DimensionError, NumericError


@dataclass
class RidgeClassifier:
    """Closed-form linear readout fit on one-hot targets."""

    weights: np.ndarray  # classes x features
    lam: float


def ridge_fit(features: np.ndarray, one_hot_labels: np.ndarray, lam: float) -> RidgeClassifier:
    """Solve ``(X^T X + lam I) W^T = X^T Y``."""
    if features.ndim != 2 or one_hot_labels.ndim != 2:
        raise DimensionError(
            f"ridge_fit expects 2-D inputs, got {features.shape} and {one_hot_labels.shape}"
        )
    if features.shape[0] != one_hot_labels.shape[0] or features.shape[0] < 1:
        raise DimensionError(
            f"ridge_fit: {features.shape[0]} feature rows vs {one_hot_labels.shape[0]} label rows"
        )
    if lam < 0:
        raise ConfigurationError(f"ridge lambda must be >= 0, got {lam}")

    x = features.astype(np.float64, copy=False)
    gram = x.T @ x
    gram[np.diag_indices_from(gram)] += lam
    rhs = x.T @ one_hot_labels
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericError("X^T X is singular at lambda=0; use a positive ridge lambda")
    try:
        w_t = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"ridge system is singular ({exc}); use a positive ridge lambda") from exc
    return RidgeClassifier(weights=np.ascontiguousarray(w_t.T), lam=lam)


def ridge_scores(clf: RidgeClassifier, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != clf.weights.shape[1]:
        raise DimensionError(
            f"ridge readout expects {clf.weights.shape[1]} features, got {features.shape[-1]}"
        )
    return features @ clf.weights.T


def ridge_predict(clf: RidgeClassifier, features: np.ndarray) -> np.ndarray:
    # argmax ties go to the lowest class index
    return ridge_scores(clf, features).argmax(axis=1)


def ridge_objective(clf: RidgeClassifier, features: np.ndarray, one_hot_labels: np.ndarray) -> float:
    residual = features @ clf.weights.T - one_hot_labels
    return float(np.sum(residual**2) + clf.lam * np.sum(clf.weights**2))
