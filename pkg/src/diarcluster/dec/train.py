"""Autoencoder pretraining and (improved) Deep Embedded Clustering training."""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..classic import kmeans
from ..core import ClusterModel
from .losses import (
    LossBreakdown,
    NonFiniteLossError,
    cluster_losses,
    hard_assign,
    reconstruction_loss,
    soft_assign,
    target_distribution,
)
from .network import (
    DESK_LAYER_SIZES,
    FULL_LAYER_SIZES,
    Adamax,
    AutoencoderParams,
    backward,
    encode,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (0.1, 1.0, 10.0, 1.0)
ORIGINAL_WEIGHTS = (1.0, 0.0, 0.0, 0.0)
ARCHITECTURES = {"desk": DESK_LAYER_SIZES, "full": FULL_LAYER_SIZES}


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, epoch=None, batch=None, breakdown=None, checkpoint=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.breakdown = breakdown
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class DecConfig:
    mode: str = "improved"              # "improved" | "original"
    a: float = 1.0
    exponent: str = "variant"           # "variant" | "standard"
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    lr: float = 0.001
    batch: int = 64
    epochs: int = 100
    pretrain_epochs: int = 100
    dropout: float = 0.2
    recalib_period: int | None = 20     # None or 0 disables re-calibration
    target_update_period: int = 5
    kmeans_n_init: int = 10
    # "desk" (256-wide hidden layers) or "full" (2048-wide); an explicit
    # layer_sizes overrides both, its end sizes are replaced by the input dim
    architecture: str = "desk"
    layer_sizes: tuple[int, ...] | None = None
    seed: int = 0

    def sizes_for(self, in_dim: int) -> tuple[int, ...]:
        if self.layer_sizes is not None:
            hidden = tuple(self.layer_sizes[1:-1])
        elif self.architecture in ARCHITECTURES:
            hidden = ARCHITECTURES[self.architecture][1:-1]
        else:
            raise ValueError(f"unknown architecture {self.architecture!r}; choose from {sorted(ARCHITECTURES)}")
        return (in_dim,) + hidden + (in_dim,)

    def resolved(self) -> "DecConfig":
        """Original DEC: clustering KL only, no re-calibration."""
        if self.mode == "original":
            return replace(self, weights=ORIGINAL_WEIGHTS, recalib_period=None)
        if self.mode != "improved":
            raise ValueError(f"unknown DEC mode {self.mode!r}")
        return self

    def to_json(self) -> dict:
        out = asdict(self)
        out["weights"] = list(self.weights)
        out["layer_sizes"] = list(self.layer_sizes) if self.layer_sizes is not None else None
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "DecConfig":
        obj = dict(obj)
        if "weights" in obj:
            obj["weights"] = tuple(float(w) for w in obj["weights"])
        if obj.get("layer_sizes") is not None:
            obj["layer_sizes"] = tuple(int(s) for s in obj["layer_sizes"])
        return cls(**obj)


@dataclass
class DecState:
    params: AutoencoderParams
    centroids: np.ndarray
    z: np.ndarray
    q: np.ndarray
    p: np.ndarray
    a: float = 1.0
    exponent: str = "variant"
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    recalib_period: int | None = 20
    epoch: int = 0
    history: list[LossBreakdown] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def make_state(params: AutoencoderParams, X, centroids, a=1.0, exponent="variant", weights=DEFAULT_WEIGHTS, recalib_period=None) -> DecState:
    """State with ``z``, ``q`` and ``p`` computed from the current network."""
    z = encode(params, X)
    q = soft_assign(z, centroids, a, exponent)
    return DecState(params, np.array(centroids, dtype=np.float64), z, q, target_distribution(q), a, exponent, tuple(weights), recalib_period)


def _losses_and_grads(params, centroids, X, p_fixed, a, exponent, weights, need_grad=True):
    alpha, beta, gamma, delta = weights
    cache = forward(params, X)
    n = X.shape[0]
    (l_c, l_u, l_mse), g_z, g_mu = cluster_losses(cache.z, centroids, p_fixed, a, exponent, weights, need_grad)
    l_r = reconstruction_loss(X, cache.x_rec)
    bd = LossBreakdown(l_c, l_r, l_u, l_mse, tuple(weights))
    if not need_grad:
        return bd, None, None
    g_rec = beta * 2.0 * (cache.x_rec - X) / n if beta else None
    g_params = backward(params, cache, g_rec, g_z)
    return bd, g_params, g_mu


def loss_terms(X, state: DecState) -> LossBreakdown:
    """All four terms plus the weighted total for ``state`` on ``X``."""
    X = np.asarray(X, dtype=np.float64)
    bd, _, _ = _losses_and_grads(state.params, state.centroids, X, state.p, state.a, state.exponent, state.weights, need_grad=False)
    if not bd.is_finite():
        raise NonFiniteLossError(f"non-finite loss terms: {bd}")
    return bd


# --------------------------------------------------------------------------
# pretraining
# --------------------------------------------------------------------------


def _batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i : i + batch] for i in range(0, n, batch)]


def pretrain_autoencoder(
    X,
    epochs: int = 100,
    dropout_rate: float = 0.2,
    lr: float = 0.001,
    batch: int = 64,
    seed: int = 0,
    layer_sizes=None,
    params: AutoencoderParams | None = None,
    history: list | None = None,
) -> AutoencoderParams:
    """Train the autoencoder on reconstruction error with Adamax.

    Dropout (inverted scaling) is applied to encoder hidden activations. A
    fresh network is initialized from ``seed`` unless ``params`` is given;
    the input is never modified in place. ``history`` receives the
    full-data reconstruction loss after every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < batch:
        raise ValueError(f"need at least batch={batch} samples, got {n}")
    if params is None:
        params = init_params(layer_sizes or DecConfig().sizes_for(X.shape[1]), seed)
    else:
        params = params.copy()
    if X.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input dim {X.shape[1]} != network input {params.layer_sizes[0]}")
    rng = np.random.default_rng(seed + 7919)
    opt = Adamax(lr)
    arrays = params.arrays()
    for epoch in range(epochs):
        for b, idx in enumerate(_batches(n, batch, rng)):
            xb = X[idx]
            cache = forward(params, xb, dropout_rate, rng)
            loss = reconstruction_loss(xb, cache.x_rec)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"pretraining diverged at epoch {epoch}, batch {b}: l_r={loss}", epoch, b, {"l_r": loss}
                )
            grads = backward(params, cache, 2.0 * (cache.x_rec - xb) / len(idx))
            opt.step(arrays, grads)
        if history is not None:
            history.append(reconstruction_loss(X, forward(params, X).x_rec))
    return params


# --------------------------------------------------------------------------
# DEC
# --------------------------------------------------------------------------


def _init_centroids(Z, k, seed, n_init):
    return kmeans(Z, k, seed=seed, n_init=n_init).centroids


def train_dec(
    X,
    k: int,
    config: DecConfig | None = None,
    params: AutoencoderParams | None = None,
) -> tuple[DecState, ClusterModel]:
    """Jointly refine encoder and centroids on the weighted four-term loss.

    Procedure: pretrain (unless ``params`` is supplied), encode, initialize
    the centroids with k-Means, then per epoch: re-calibrate the centroids
    with k-Means on the current codes every ``recalib_period`` epochs, or
    otherwise refresh the target every ``target_update_period`` epochs, then
    take one Adamax step per minibatch on network and centroids. The result
    is the hard ``argmax q`` labelling; empty clusters are flagged in
    ``state.warnings``.
    """
    cfg = (config or DecConfig()).resolved()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"k={k} exceeds the number of samples n={n}")
    if params is None:
        params = pretrain_autoencoder(X, cfg.pretrain_epochs, cfg.dropout, cfg.lr, min(cfg.batch, n), cfg.seed, cfg.sizes_for(X.shape[1]))
    else:
        params = params.copy()

    batch = min(cfg.batch, n)
    rng = np.random.default_rng(cfg.seed + 104729)
    centroids = _init_centroids(encode(params, X), k, cfg.seed, cfg.kmeans_n_init)
    state = make_state(params, X, centroids, cfg.a, cfg.exponent, cfg.weights, cfg.recalib_period)

    opt_net = Adamax(cfg.lr)
    opt_mu = Adamax(cfg.lr)
    arrays = params.arrays()
    mu = [state.centroids]
    last_good = (params.copy(), state.centroids.copy(), 0)

    for epoch in range(cfg.epochs):
        if epoch > 0:
            if cfg.recalib_period and epoch % cfg.recalib_period == 0:
                z = encode(params, X)
                mu[0][...] = _init_centroids(z, k, cfg.seed + epoch, cfg.kmeans_n_init)
                opt_mu = Adamax(cfg.lr)
                state.p = target_distribution(soft_assign(z, mu[0], cfg.a, cfg.exponent))
            elif epoch % cfg.target_update_period == 0:
                state.p = target_distribution(soft_assign(encode(params, X), mu[0], cfg.a, cfg.exponent))
        for b, idx in enumerate(_batches(n, batch, rng)):
            xb = X[idx]
            pb = state.p[idx]
            bd, g_params, g_mu = _losses_and_grads(params, mu[0], xb, pb, cfg.a, cfg.exponent, cfg.weights)
            if not bd.is_finite() or not all(np.all(np.isfinite(g)) for g in g_params):
                params_ck, mu_ck, ep_ck = last_good
                raise TrainingDivergedError(
                    f"DEC diverged at epoch {epoch}, batch {b}: {bd}",
                    epoch,
                    b,
                    bd,
                    {"params": params_ck, "centroids": mu_ck, "epoch": ep_ck},
                )
            opt_net.step(arrays, g_params)
            opt_mu.step(mu, [g_mu])
        epoch_bd, _, _ = _losses_and_grads(params, mu[0], X, state.p, cfg.a, cfg.exponent, cfg.weights, need_grad=False)
        if not epoch_bd.is_finite():
            raise TrainingDivergedError(f"DEC diverged after epoch {epoch}: {epoch_bd}", epoch, None, epoch_bd)
        state.history.append(epoch_bd)
        last_good = (params.copy(), mu[0].copy(), epoch + 1)

    state.params = params
    state.centroids = mu[0]
    state.z = encode(params, X)
    state.q = soft_assign(state.z, state.centroids, cfg.a, cfg.exponent)
    state.epoch = cfg.epochs
    labels = hard_assign(state.q)
    sizes = np.bincount(labels, minlength=k)
    if np.any(sizes == 0):
        msg = f"{int(np.sum(sizes == 0))} empty cluster(s) after DEC training"
        state.warnings.append(msg)
        log.warning(msg)
    model = ClusterModel(k, state.centroids, labels, "plusplus_init", cfg.seed, warnings=tuple(state.warnings))
    return state, model


# --------------------------------------------------------------------------
# gradient check
# --------------------------------------------------------------------------

_TERM_WEIGHTS = {
    "l_c": (1.0, 0.0, 0.0, 0.0),
    "l_r": (0.0, 1.0, 0.0, 0.0),
    "l_u": (0.0, 0.0, 1.0, 0.0),
    "l_mse": (0.0, 0.0, 0.0, 1.0),
}


def grad_check(state: DecState, X, term: str = "total", h: float = 1e-5, floor: float = 1e-5) -> float:
    """Max elementwise relative error between the analytic gradient of one
    loss term (or the weighted ``"total"``) and central finite differences,
    over every network parameter and centroid coordinate. The target ``p``
    is held at ``state.p``. Relative error is ``|a - n| / max(|a|, |n|, floor)``."""
    weights = state.weights if term == "total" else _TERM_WEIGHTS[term]
    X = np.asarray(X, dtype=np.float64)
    params = state.params.copy()
    mu = state.centroids.copy()

    def value():
        bd, _, _ = _losses_and_grads(params, mu, X, state.p, state.a, state.exponent, weights, need_grad=False)
        return bd.total

    _, g_params, g_mu = _losses_and_grads(params, mu, X, state.p, state.a, state.exponent, weights)
    worst = 0.0
    for arr, grad in zip(params.arrays() + [mu], g_params + [g_mu]):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints and loss curves
# --------------------------------------------------------------------------

_MAGIC = b"DCAE"


def save_checkpoint(path, params: AutoencoderParams, centroids=None, *, a=1.0, weights=DEFAULT_WEIGHTS, seed=0, epoch=0) -> None:
    """``DCAE``, uint32-LE header length, JSON header, then little-endian
    float32 parameters (W0, b0, W1, b1, ..., centroids)."""
    header = {
        "layer_sizes": list(params.layer_sizes),
        "activations": list(params.activations),
        "a": a,
        "weights": list(weights),
        "seed": seed,
        "epoch": epoch,
        "centroid_shape": list(np.shape(centroids)) if centroids is not None else None,
    }
    blob = b"".join(arr.astype("<f4").tobytes() for arr in params.arrays())
    if centroids is not None:
        blob += np.asarray(centroids).astype("<f4").tobytes()
    raw_header = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(raw_header)) + raw_header + blob)


def load_checkpoint(path) -> tuple[AutoencoderParams, np.ndarray | None, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an autoencoder checkpoint")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen])
    data = np.frombuffer(raw, dtype="<f4", offset=8 + hlen).astype(np.float64)
    sizes = header["layer_sizes"]
    pos = 0
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(data[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(data[pos : pos + fan_out].copy())
        pos += fan_out
    centroids = None
    if header.get("centroid_shape"):
        shape = tuple(header["centroid_shape"])
        centroids = data[pos : pos + int(np.prod(shape))].reshape(shape).copy()
    return AutoencoderParams(tuple(sizes), weights, biases, tuple(header["activations"])), centroids, header


def loss_curve_csv(history) -> str:
    """CSV with columns epoch,l_c,l_r,l_u,l_mse,total."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "l_c", "l_r", "l_u", "l_mse", "total"])
    for epoch, bd in enumerate(history, start=1):
        if isinstance(bd, LossBreakdown):
            row = bd.as_row()
        else:
            row = [0.0, float(bd), 0.0, 0.0, float(bd)]
        writer.writerow([epoch] + [f"{v:.10g}" for v in row])
    return buf.getvalue()
