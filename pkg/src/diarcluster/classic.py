"""Baseline clusterers: Lloyd k-Means, spectral clustering on the normalized
graph Laplacian, and x-Means with BIC-driven splitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ClusterModel, SpeakerProfiles

log = logging.getLogger(__name__)


def _as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected an n x d sample matrix, got shape {X.shape}")
    return X


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, n x k, computed by explicit differences
    so the result has no cancellation error near zero."""
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_objective(X, centroids, assignments) -> float:
    X = _as_samples(X)
    resid = X - centroids[assignments]
    return float(np.sum(resid * resid))


def assign_to_centroids(model: ClusterModel | np.ndarray, X_new) -> np.ndarray:
    """Nearest-centroid labels; ties go to the lowest cluster index."""
    centroids = model.centroids if isinstance(model, ClusterModel) else np.asarray(model, float)
    X_new = _as_samples(X_new)
    if X_new.shape[1] != centroids.shape[1]:
        raise ValueError(f"sample dim {X_new.shape[1]} != centroid dim {centroids.shape[1]}")
    # np.argmin returns the first minimum
    return np.argmin(sq_distances(X_new, centroids), axis=1)


def plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator, n_trials: int | None = None) -> np.ndarray:
    """Greedy k-means++ seeding: each new centre is the best of ``n_trials``
    D^2-weighted draws (default ``2 + ln k``), which keeps isolated outliers
    from being picked as seeds."""
    n = X.shape[0]
    if n_trials is None:
        n_trials = 2 + int(np.log(k))
    idx = [int(rng.integers(n))]
    d2 = sq_distances(X, X[idx[0]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres
            choice = int(rng.integers(n))
        else:
            cands = rng.choice(n, size=n_trials, p=d2 / total)
            cand_d2 = np.minimum(d2[None, :], sq_distances(X[cands], X))
            choice = int(cands[np.argmin(cand_d2.sum(axis=1))])
        idx.append(choice)
        d2 = np.minimum(d2, sq_distances(X, X[choice][None])[:, 0])
    return X[idx].copy()


def _lloyd(X, centroids, max_iter, tol, history=None):
    k = centroids.shape[0]
    centroids = centroids.copy()
    labels = assign_to_centroids(centroids, X)
    for _ in range(max_iter):
        if history is not None:
            history.append(kmeans_objective(X, centroids, labels))
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = X[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # re-seed each empty centroid at the sample farthest from its own centroid
            labels = labels.copy()
            for j in empty:
                resid = np.sum((X - new[labels]) ** 2, axis=1)
                pick = int(np.argmax(resid))
                new[j] = X[pick]
                labels[pick] = j
        shift = np.max(np.sqrt(np.sum((new - centroids) ** 2, axis=1)))
        centroids = new
        labels = assign_to_centroids(centroids, X)
        if shift < tol:
            break
    if history is not None:
        history.append(kmeans_objective(X, centroids, labels))
    return centroids, labels


def kmeans(
    X,
    k: int,
    init="plusplus",
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_init: int = 1,
    history: list | None = None,
) -> ClusterModel:
    """Lloyd's algorithm minimizing within-cluster squared distance.

    ``init`` is ``"plusplus"``, ``"random"``, a :class:`SpeakerProfiles`, or
    a k x d array of starting centroids. ``n_init`` restarts only apply to
    the random initializers; the lowest objective wins. An empty cluster is
    re-seeded at the sample farthest from its current centroid.
    """
    X = _as_samples(X)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples n={n}")

    if isinstance(init, SpeakerProfiles) or not isinstance(init, str):
        start = init.vectors if isinstance(init, SpeakerProfiles) else np.asarray(init, float)
        start = np.atleast_2d(start)
        if start.shape != (k, X.shape[1]):
            raise ValueError(f"initial centroids have shape {start.shape}, expected {(k, X.shape[1])}")
        centroids, labels = _lloyd(X, start, max_iter, tol, history)
        source = "profile_init" if isinstance(init, SpeakerProfiles) else "random_init"
        return ClusterModel(k, centroids, labels, source, seed, kmeans_objective(X, centroids, labels))

    if init not in ("plusplus", "random"):
        raise ValueError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        if init == "plusplus":
            start = plusplus_init(X, k, rng)
        else:
            start = X[rng.choice(n, size=k, replace=False)].copy()
        hist = [] if history is not None else None
        centroids, labels = _lloyd(X, start, max_iter, tol, hist)
        obj = kmeans_objective(X, centroids, labels)
        if best is None or obj < best[0]:
            best = (obj, centroids, labels, hist)
    obj, centroids, labels, hist = best
    if history is not None:
        history.extend(hist)
    source = "plusplus_init" if init == "plusplus" else "random_init"
    return ClusterModel(k, centroids, labels, source, seed, obj)


# --------------------------------------------------------------------------
# spectral
# --------------------------------------------------------------------------


def cosine_similarity(X) -> np.ndarray:
    """Clamped cosine affinity, ``A_ij = max(0, cos(x_i, x_j))`` with unit diagonal."""
    X = _as_samples(X)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"sample {int(zero[0])} has zero norm; cosine similarity undefined")
    U = X / norms[:, None]
    A = np.clip(U @ U.T, 0.0, None)
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 1.0)
    return A


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError(f"node {int(np.flatnonzero(deg <= 0)[0])} has zero degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.eye(A.shape[0]) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
    return 0.5 * (L + L.T)


def spectral_embedding(A: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized eigenvectors of the k smallest eigenvalues of L_sym."""
    L = normalized_laplacian(A)
    try:
        evals, evecs = np.linalg.eigh(L)
    except np.linalg.LinAlgError as err:
        raise RuntimeError(f"eigen-decomposition of the Laplacian failed: {err}") from err
    V = evecs[:, :k]
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return evals[:k], V / norms


def spectral_cluster(X=None, k: int = 2, seed: int = 0, affinity=None, n_init: int = 10) -> ClusterModel:
    """k-Means on the leading eigenvectors of the symmetric normalized Laplacian.

    The affinity defaults to :func:`cosine_similarity` of ``X``; a precomputed
    matrix may be passed as ``affinity`` instead. Returned centroids are
    cluster means in the input space when ``X`` is given, otherwise in the
    spectral embedding.
    """
    A = cosine_similarity(X) if affinity is None else np.asarray(affinity, dtype=np.float64)
    n = A.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"spectral clustering needs 2 <= k <= n, got k={k}, n={n}")
    _, V = spectral_embedding(A, k)
    inner = kmeans(V, k, seed=seed, n_init=n_init)
    labels = inner.assignments
    if X is not None:
        Xs = _as_samples(X)
        centroids = np.vstack([Xs[labels == j].mean(axis=0) if np.any(labels == j) else Xs[0] for j in range(k)])
    else:
        centroids = inner.centroids
    return ClusterModel(k, centroids, labels, "plusplus_init", seed)


# --------------------------------------------------------------------------
# BIC / x-Means
# --------------------------------------------------------------------------

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class BicReport:
    model_id: str
    log_likelihood: float
    n_params: int
    n_samples: int
    bic: float
    variance: float
    variance_floored: bool = False


def bic_score(X, centroids, assignments, model_id: str = "") -> BicReport:
    """BIC of a hard-assigned spherical Gaussian mixture with shared variance.

    The log-likelihood uses mixing weights ``n_j / n`` and the MLE of the
    shared variance ``sum ||x - mu||^2 / (n d)``. Parameter count is
    ``k*d`` means + ``k-1`` mixing weights + 1 variance.
    """
    X = _as_samples(X)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    assignments = np.asarray(assignments, dtype=np.int64)
    n, d = X.shape
    if n == 0:
        raise ValueError("BIC needs at least one sample")
    k = centroids.shape[0]
    sse = kmeans_objective(X, centroids, assignments)
    variance = sse / (n * d)
    floored = variance <= VARIANCE_FLOOR
    if floored:
        variance = VARIANCE_FLOOR
    counts = np.bincount(assignments, minlength=k)
    nz = counts[counts > 0]
    loglik = (
        float(np.sum(nz * np.log(nz / n)))
        - 0.5 * n * d * np.log(2 * np.pi * variance)
        - 0.5 * sse / variance
    )
    n_params = k * d + (k - 1) + 1
    bic = loglik - 0.5 * n_params * np.log(n)
    return BicReport(model_id or f"k={k}", float(loglik), n_params, n, float(bic), float(variance), floored)


def xmeans(
    X,
    k_min: int = 1,
    k_max: int = 16,
    seed: int = 0,
    n_init: int = 3,
    max_iter: int = 300,
    tol: float = 1e-6,
    global_bic: bool = False,
) -> ClusterModel:
    """Grow k from ``k_min`` by 2-means splits that raise the BIC.

    Each round tries to split every cluster into two on its own points and
    keeps the split when the children's BIC beats the parent's on that
    subset (``global_bic=True`` compares whole-model BIC instead). After
    each round of accepted splits the full set is re-clustered with the
    surviving centres as the start.
    """
    X = _as_samples(X)
    n = X.shape[0]
    if not 1 <= k_min <= k_max <= n:
        raise ValueError(f"need 1 <= k_min <= k_max <= n, got {k_min}, {k_max}, n={n}")
    model = kmeans(X, k_min, seed=seed, n_init=n_init, max_iter=max_iter, tol=tol)
    if k_min == k_max:
        return model
    rng = np.random.default_rng(seed + 1)
    centroids, labels = model.centroids, model.assignments

    while centroids.shape[0] < k_max:
        new_centroids = []
        budget = k_max - centroids.shape[0]
        for j in range(centroids.shape[0]):
            members = X[labels == j]
            if budget <= 0 or members.shape[0] < 2:
                new_centroids.append(centroids[j])
                continue
            child = kmeans(members, 2, seed=int(rng.integers(2**31)), n_init=n_init, max_iter=max_iter, tol=tol)
            if np.min(child.cluster_sizes()) == 0:
                new_centroids.append(centroids[j])
                continue
            if global_bic:
                trial = np.vstack(new_centroids + [child.centroids] + list(centroids[j + 1 :]))
                cur = np.vstack(new_centroids + [centroids[j]] + list(centroids[j + 1 :]))
                accept = (
                    bic_score(X, trial, assign_to_centroids(trial, X)).bic
                    > bic_score(X, cur, assign_to_centroids(cur, X)).bic
                )
            else:
                parent = bic_score(members, centroids[j][None], np.zeros(len(members), dtype=np.int64))
                kids = bic_score(members, child.centroids, child.assignments)
                accept = kids.bic > parent.bic
            if accept:
                new_centroids.extend(child.centroids)
                budget -= 1
            else:
                new_centroids.append(centroids[j])
        if len(new_centroids) == centroids.shape[0]:
            break
        refined = kmeans(X, len(new_centroids), init=np.vstack(new_centroids), max_iter=max_iter, tol=tol)
        centroids, labels = refined.centroids, refined.assignments
    k = centroids.shape[0]
    return ClusterModel(k, centroids, labels, "plusplus_init", seed, kmeans_objective(X, centroids, labels))
