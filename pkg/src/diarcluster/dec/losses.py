"""Student-t soft assignment, sharpened targets, and the four DEC loss terms
with their gradients w.r.t. latent codes and centroids.

All terms are averaged over the rows they are evaluated on, so the weights
do not depend on batch size. The clustering KL term treats the target ``p``
as a constant (self-training). The balance term is evaluated on the target
computed from the *current* ``q`` and differentiated through it; with a
frozen target its gradient would vanish identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXPONENTS = ("variant", "standard")
_TINY = np.finfo(np.float64).tiny


class EmptySoftClusterError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


def student_t_exponent(a: float, exponent: str = "variant") -> float:
    """``(a+1)/a`` (default) or the ``(a+1)/2`` of the original DEC formulation."""
    if a <= 0:
        raise ValueError("Student-t parameter a must be > 0")
    if exponent == "variant":
        return (a + 1.0) / a
    if exponent == "standard":
        return (a + 1.0) / 2.0
    raise ValueError(f"unknown exponent convention {exponent!r}")


def _sq_dist(Z, centroids):
    diff = Z[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _log_soft_assign(Z, centroids, a, exponent):
    e = student_t_exponent(a, exponent)
    d = _sq_dist(Z, centroids)
    s = -e * np.log1p(d / a)
    s_max = s.max(axis=1, keepdims=True)
    log_norm = s_max + np.log(np.sum(np.exp(s - s_max), axis=1, keepdims=True))
    return s - log_norm, d, e


def soft_assign(Z, centroids, a: float = 1.0, exponent: str = "variant") -> np.ndarray:
    """q_ij proportional to ``(1 + ||z_i - mu_j||^2 / a) ** -e``, rows summing to 1."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    log_q, _, _ = _log_soft_assign(Z, centroids, a, exponent)
    return np.maximum(np.exp(log_q), _TINY)


def target_distribution(q) -> np.ndarray:
    """Sharpened target ``p_ij ~ q_ij^2 / f_j`` with ``f_j = sum_i q_ij``."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise EmptySoftClusterError(f"soft cluster {int(np.flatnonzero(f <= 0)[0])} has zero mass")
    w = q * q / f
    return np.maximum(w / w.sum(axis=1, keepdims=True), _TINY)


def kl_rows(p, q) -> float:
    """Sum over rows of KL(p_i || q_i)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.broadcast_to(np.asarray(q, dtype=np.float64), p.shape)
    pos = p > 0
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


def kl_to_uniform(p) -> float:
    """Sum over rows of KL(p_i || uniform over k)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    return kl_rows(p, np.full(p.shape, 1.0 / p.shape[1]))


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_r: float
    l_u: float
    l_mse: float
    weights: tuple[float, float, float, float]

    @property
    def total(self) -> float:
        alpha, beta, gamma, delta = self.weights
        return alpha * self.l_c + beta * self.l_r + gamma * self.l_u + delta * self.l_mse

    def as_row(self) -> list[float]:
        return [self.l_c, self.l_r, self.l_u, self.l_mse, self.total]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_row())))


def hard_assign(q) -> np.ndarray:
    return np.argmax(q, axis=1)


def cluster_losses(
    Z: np.ndarray,
    centroids: np.ndarray,
    p_fixed: np.ndarray,
    a: float = 1.0,
    exponent: str = "variant",
    weights=(1.0, 0.0, 1.0, 1.0),
    need_grad: bool = True,
):
    """Clustering-side terms ``(l_c, l_u, l_mse)`` and, when ``need_grad``,
    the gradient of ``alpha*l_c + gamma*l_u + delta*l_mse`` w.r.t. ``Z`` and
    the centroids. ``weights`` is the full 4-tuple; its beta entry is unused."""
    alpha, _, gamma, delta = weights
    n, k = Z.shape[0], centroids.shape[0]
    log_q, d, e = _log_soft_assign(Z, centroids, a, exponent)
    q = np.maximum(np.exp(log_q), _TINY)

    pos = p_fixed > 0
    l_c = float(np.sum(p_fixed[pos] * (np.log(p_fixed[pos]) - log_q[pos]))) / n

    f = q.sum(axis=0)
    w = q * q / f
    W = w.sum(axis=1, keepdims=True)
    p_live = w / W
    log_p_live = np.log(np.maximum(p_live, _TINY))
    l_u = float(np.sum(p_live * (log_p_live + np.log(k)))) / n

    labels = np.argmax(q, axis=1)
    resid = Z - centroids[labels]
    l_mse = float(np.sum(resid * resid)) / n

    if not need_grad:
        return (l_c, l_u, l_mse), None, None

    # d/ds of the softmax logits s_ij = -e log(1 + d_ij / a)
    grad_s = np.zeros_like(q)
    if alpha:
        grad_s += alpha * (q - p_fixed) / n
    if gamma:
        g_p = (log_p_live + np.log(k) + 1.0) / n
        g_w = (g_p - np.sum(g_p * p_live, axis=1, keepdims=True)) / W
        g_q = g_w * 2.0 * q / f - np.sum(g_w * q * q, axis=0) / (f * f)
        grad_s += gamma * q * (g_q - np.sum(g_q * q, axis=1, keepdims=True))
    grad_d = grad_s * (-e / (a + d))

    grad_z = 2.0 * (Z * grad_d.sum(axis=1, keepdims=True) - grad_d @ centroids)
    grad_mu = -2.0 * (grad_d.T @ Z - grad_d.sum(axis=0)[:, None] * centroids)
    if delta:
        grad_z += delta * 2.0 * resid / n
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        grad_mu += -delta * 2.0 * (onehot.T @ resid) / n
    return (l_c, l_u, l_mse), grad_z, grad_mu


def reconstruction_loss(X, X_rec) -> float:
    resid = X_rec - X
    return float(np.sum(resid * resid)) / X.shape[0]
