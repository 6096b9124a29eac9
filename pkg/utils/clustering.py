"""
K-Means and diagonal-covariance Gaussian Mixture Models.

Both are small, deterministic implementations sized for the per-cell
training sets of the clustering block (~25-100 samples, 13 features):

- K-Means: k-means++ seeding, Lloyd iterations until the centroid shift
  drops below 1e-6 or 300 iterations. Empty clusters are re-seeded from
  the point farthest from its centroid.
- GMM: EM initialized from K-Means with the same seed, diagonal
  covariances floored at 1e-6, stops when the log-likelihood gain drops
  below 1e-6 or after 200 iterations.

Ties (equidistant centroids, equal responsibilities) resolve to the
lowest cluster index everywhere.

Reference:
- Lloyd, least squares quantization in PCM
- Arthur & Vassilvitskii, k-means++ seeding
- Dempster, Laird & Rubin, EM for mixture models
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6
GMM_MAX_ITER = 200
GMM_TOL = 1e-6
VARIANCE_FLOOR = 1e-6
# Allowed round-off when checking monotone objectives
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class KMeansModel:
    """
    Trained K-Means model.

    Attributes:
        k: Cluster count
        centroids: (k, d) centroid matrix
        inertia: Sum of squared distances of training points to their
            nearest centroid
        seed: Seed used for k-means++ seeding
        n_iter: Lloyd iterations performed
        inertia_history: Inertia after each assignment step
    """

    k: int
    centroids: np.ndarray
    inertia: float
    seed: int
    n_iter: int = 0
    inertia_history: Tuple[float, ...] = field(default=(), compare=False)

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])


@dataclass(frozen=True)
class GmmModel:
    """
    Trained Gaussian mixture with diagonal covariances.

    Attributes:
        k: Component count
        weights: (k,) mixing weights summing to 1
        means: (k, d) component means
        variances: (k, d) diagonal covariances, each entry >= VARIANCE_FLOOR
        log_likelihood: Total training log-likelihood of the final model
        seed: Seed used for the K-Means initialization
        n_iter: EM iterations performed
        log_likelihood_history: Log-likelihood at each E-step
    """

    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    seed: int
    n_iter: int = 0
    log_likelihood_history: Tuple[float, ...] = field(default=(), compare=False)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


ClusterModel = Union[KMeansModel, GmmModel]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _check_matrix(X: np.ndarray, k: int, min_k: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"Expected an n x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("Training matrix contains non-finite values")
    if k < min_k:
        raise ValueError(f"Cluster count must be >= {min_k}, got {k}")
    if X.shape[0] < k:
        raise ValueError(f"Need at least k={k} points, got n={X.shape[0]}")
    return X


def squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) matrix of squared Euclidean distances."""
    diff = X[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


# ---------------------------------------------------------------------------
# K-Means
# ---------------------------------------------------------------------------

def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks when all points coincide."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest = squared_distances(X, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[j] = X[idx]
        closest = np.minimum(closest, squared_distances(X, centroids[j:j + 1])[:, 0])
    return centroids


def train_kmeans(
    X: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL
) -> KMeansModel:
    """
    Fit K-Means with k-means++ seeding and Lloyd iterations.

    Duplicate-only data yields a degenerate zero-inertia model instead of
    an error (augmented cells often contain repeated rows).

    Raises:
        ValueError: n < k, k < 1, or non-finite input
        RuntimeError: inertia increased between iterations
    """
    X = _check_matrix(X, k, min_k=1)
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(X, k, rng)

    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        dist = squared_distances(X, centroids)
        assignment = np.argmin(dist, axis=1)
        point_dist = dist[np.arange(len(X)), assignment]
        inertia = float(point_dist.sum())

        if history and inertia > history[-1] + MONOTONE_SLACK * max(1.0, history[-1]):
            raise RuntimeError(
                f"K-Means inertia increased at iteration {n_iter}: {history[-1]} -> {inertia}"
            )
        history.append(inertia)

        updated = centroids.copy()
        for j in range(k):
            members = assignment == j
            if members.any():
                updated[j] = X[members].mean(axis=0)

        empty = [j for j in range(k) if not (assignment == j).any()]
        if empty:
            # Re-seed each empty cluster from the current farthest point.
            point_dist = point_dist.copy()
            for j in empty:
                far = int(np.argmax(point_dist))
                updated[j] = X[far]
                point_dist[far] = 0.0
            logger.debug(f"K-Means k={k}: re-seeded {len(empty)} empty cluster(s)")

        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < tol:
            break

    dist = squared_distances(X, centroids)
    inertia = float(dist.min(axis=1).sum())
    if inertia > history[-1] + MONOTONE_SLACK * max(1.0, history[-1]):
        raise RuntimeError(f"K-Means final inertia increased: {history[-1]} -> {inertia}")
    history.append(inertia)

    logger.debug(f"K-Means k={k} seed={seed}: {n_iter} iterations, inertia {inertia:.6g}")
    return KMeansModel(
        k=k,
        centroids=_freeze(centroids),
        inertia=inertia,
        seed=seed,
        n_iter=n_iter,
        inertia_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Gaussian Mixture Model
# ---------------------------------------------------------------------------

def _log_joint(X: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, k) matrix of log(weight_j * N(x | mean_j, diag(var_j)))."""
    d = X.shape[1]
    log_det = np.log(variances).sum(axis=1)
    diff = X[:, None, :] - means[None, :, :]
    mahal = np.einsum("nkd,kd->nk", diff * diff, 1.0 / variances)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (d * np.log(2.0 * np.pi) + log_det[None, :] + mahal)


def _m_step(X: np.ndarray, resp: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = X.shape[0]
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, np.finfo(float).tiny)
    weights = nk / n
    means = (resp.T @ X) / safe[:, None]
    diff_sq = (X[:, None, :] - means[None, :, :]) ** 2
    variances = np.einsum("nk,nkd->kd", resp, diff_sq) / safe[:, None]
    return weights, means, np.maximum(variances, VARIANCE_FLOOR)


def responsibilities(model: GmmModel, X: np.ndarray) -> np.ndarray:
    """Posterior component probabilities; each row sums to 1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ValueError(f"Dimension mismatch: model expects {model.dim}, got {X.shape[1]}")
    log_joint = _log_joint(X, model.weights, model.means, model.variances)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def train_gmm(
    X: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = GMM_MAX_ITER,
    tol: float = GMM_TOL
) -> GmmModel:
    """
    Fit a diagonal-covariance GMM by EM, initialized from train_kmeans(X, k, seed).

    k = 1 is solved in closed form (column means and variances).

    Raises:
        ValueError: n < k, k < 1, or non-finite input
        RuntimeError: log-likelihood decreased between iterations
    """
    X = _check_matrix(X, k, min_k=1)
    n, d = X.shape

    if k == 1:
        resp = np.ones((n, 1))
    else:
        init = train_kmeans(X, k, seed)
        assignment = np.argmin(squared_distances(X, np.asarray(init.centroids)), axis=1)
        resp = np.zeros((n, k))
        resp[np.arange(n), assignment] = 1.0
    weights, means, variances = _m_step(X, resp)
    if k > 1:
        # Components left empty by duplicate-only data keep their centroid.
        empty = weights == 0.0
        if empty.any():
            means[empty] = np.asarray(init.centroids)[empty]
            weights = np.maximum(weights, 1e-12)
            weights = weights / weights.sum()

    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        log_joint = _log_joint(X, weights, means, variances)
        log_norm = logsumexp(log_joint, axis=1, keepdims=True)
        ll = float(log_norm.sum())

        if history and ll < history[-1] - MONOTONE_SLACK * max(1.0, abs(history[-1])):
            raise RuntimeError(
                f"GMM log-likelihood decreased at iteration {n_iter}: {history[-1]} -> {ll}"
            )
        history.append(ll)
        if len(history) > 1 and ll - history[-2] < tol:
            break

        resp = np.exp(log_joint - log_norm)
        weights, means, variances = _m_step(X, resp)
        if k == 1:
            # Closed form: one M-step is exact.
            log_joint = _log_joint(X, weights, means, variances)
            history.append(float(logsumexp(log_joint, axis=1).sum()))
            break

    weights = weights / weights.sum()
    logger.debug(f"GMM k={k} seed={seed}: {n_iter} iterations, log-likelihood {history[-1]:.6g}")
    return GmmModel(
        k=k,
        weights=_freeze(weights),
        means=_freeze(means),
        variances=_freeze(variances),
        log_likelihood=history[-1],
        seed=seed,
        n_iter=n_iter,
        log_likelihood_history=tuple(history),
    )


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def assign_many(model: ClusterModel, X: np.ndarray) -> np.ndarray:
    """Cluster index in [0, k) for each row of X (lowest index on ties)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ValueError(f"Dimension mismatch: model expects {model.dim}, got {X.shape[1]}")
    if isinstance(model, KMeansModel):
        return np.argmin(squared_distances(X, np.asarray(model.centroids)), axis=1)
    log_joint = _log_joint(X, model.weights, model.means, model.variances)
    return np.argmax(log_joint, axis=1)


def assign(model: ClusterModel, x: np.ndarray) -> int:
    """Cluster index of a single d-vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"Expected a d-vector, got shape {x.shape}")
    return int(assign_many(model, x[None, :])[0])
