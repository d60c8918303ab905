"""Dense autoencoder with manual backpropagation, and the Adamax optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FULL_LAYER_SIZES = (200, 2048, 2048, 15, 2048, 2048, 200)
DESK_LAYER_SIZES = (200, 256, 256, 15, 256, 256, 200)

ACTIVATIONS = ("relu", "linear")


def default_activations(layer_sizes) -> tuple[str, ...]:
    """ReLU on hidden layers; bottleneck and reconstruction stay linear."""
    n_layers = len(layer_sizes) - 1
    bottleneck = n_layers // 2
    return tuple(
        "linear" if (i == bottleneck - 1 or i == n_layers - 1) else "relu" for i in range(n_layers)
    )


@dataclass
class AutoencoderParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 3 or len(self.layer_sizes) % 2 == 0:
            raise ValueError("layer_sizes must be an odd-length list (encoder, bottleneck, mirrored decoder)")
        if not self.activations:
            self.activations = default_activations(self.layer_sizes)
        self.activations = tuple(self.activations)
        if len(self.activations) != self.n_layers:
            raise ValueError(f"{len(self.activations)} activations for {self.n_layers} layers")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i}: weight {W.shape} / bias {b.shape} do not match layer_sizes")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_encoder_layers(self) -> int:
        return self.n_layers // 2

    @property
    def bottleneck(self) -> int:
        return self.layer_sizes[self.n_encoder_layers]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            self.layer_sizes,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(layer_sizes=FULL_LAYER_SIZES, seed: int = 0, activations=None) -> AutoencoderParams:
    """He-style fan-in uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderParams(tuple(layer_sizes), weights, biases, activations or ())


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]      # input to every layer
    pre: list[np.ndarray]         # pre-activations
    masks: list[np.ndarray | None]  # inverted-dropout multipliers applied after activation
    z: np.ndarray
    x_rec: np.ndarray


def forward(params: AutoencoderParams, X, dropout_rate: float = 0.0, rng=None) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input has shape {X.shape}, network expects {params.layer_sizes[0]} columns")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must be in [0, 1)")
    if dropout_rate > 0 and rng is None:
        rng = np.random.default_rng(0)
    h = X
    inputs, pre, masks = [], [], []
    z = None
    for i, (W, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        inputs.append(h)
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0) if act == "relu" else a
        mask = None
        # dropout on encoder hidden activations only (not on the bottleneck)
        if dropout_rate > 0 and i < params.n_encoder_layers - 1:
            mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
            h = h * mask
        masks.append(mask)
        if i == params.n_encoder_layers - 1:
            z = h
    return ForwardCache(inputs, pre, masks, z, h)


def ae_forward(params: AutoencoderParams, X, dropout_rate: float = 0.0, seed: int = 0):
    """Latent codes and reconstructions; with ``dropout_rate=0`` the pass is
    deterministic and ``seed`` is unused."""
    rng = np.random.default_rng(seed) if dropout_rate > 0 else None
    cache = forward(params, X, dropout_rate, rng)
    return cache.z, cache.x_rec


def encode(params: AutoencoderParams, X) -> np.ndarray:
    return forward(params, X).z


def backward(
    params: AutoencoderParams,
    cache: ForwardCache,
    grad_rec: np.ndarray | None,
    grad_z: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Gradients of the loss w.r.t. every parameter array (``arrays()`` order)
    given dL/dx_rec and an extra dL/dz injected at the bottleneck."""
    grads: list[np.ndarray] = [None] * (2 * params.n_layers)
    g = grad_rec if grad_rec is not None else np.zeros_like(cache.x_rec)
    for i in range(params.n_layers - 1, -1, -1):
        if i == params.n_encoder_layers - 1 and grad_z is not None:
            g = g + grad_z
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if params.activations[i] == "relu":
            g = g * (cache.pre[i] > 0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weights[i].T
    return grads


class Adamax:
    """Adam's infinity-norm variant.

    ``m <- b1 m + (1-b1) g``, ``u <- max(b2 u, |g|)``,
    ``theta <- theta - lr / (1 - b1^t) * m / (u + eps)``.
    """

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._u: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._u = [np.zeros_like(p) for p in params]
        self.t += 1
        step = self.lr / (1.0 - self.beta1**self.t)
        for p, g, m, u in zip(params, grads, self._m, self._u):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            p -= step * m / (u + self.eps)
