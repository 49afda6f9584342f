"""Small trainable networks with hand-written reverse mode.

Activations are channels-last: a dense layer acts on the last axis of any
array, a convolution expects ``(..., H, W, C)`` and keeps H and W (stride 1,
same padding). ``SoftmaxChannels`` normalizes the last axis and may only be
the final layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ParameterError, ShapeError, StateError
from .losses import LOSS_KINDS, batch_loss, loss_terms


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int = 3


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class SoftmaxChannels:
    pass


LayerSpec = Union[Dense, Conv2d, Relu, SoftmaxChannels]


class Network:
    def __init__(self, specs: Sequence[LayerSpec], params: list[dict], seed: int):
        self.specs = tuple(specs)
        self.params = params
        self.seed = seed

    @property
    def parameter_count(self) -> int:
        return sum(a.size for layer in self.params for a in layer.values())

    def named_parameters(self):
        for i, layer in enumerate(self.params):
            for name in sorted(layer):
                yield i, name, layer[name]

    def copy(self) -> "Network":
        return Network(
            self.specs, [{k: v.copy() for k, v in p.items()} for p in self.params], self.seed
        )


def _check_specs(specs: Sequence[LayerSpec]) -> None:
    channels = None
    for pos, spec in enumerate(specs):
        if isinstance(spec, (Dense, Conv2d)):
            n_in, n_out = (
                (spec.in_features, spec.out_features)
                if isinstance(spec, Dense)
                else (spec.in_channels, spec.out_channels)
            )
            if n_in < 1 or n_out < 1:
                raise ShapeError(f"layer {pos}: extents must be positive")
            if channels is not None and n_in != channels:
                raise ShapeError(f"layer {pos} expects {n_in} channels, gets {channels}")
            if isinstance(spec, Conv2d) and (spec.kernel < 1 or spec.kernel % 2 == 0):
                raise ShapeError(f"layer {pos}: kernel must be odd, got {spec.kernel}")
            channels = n_out
        elif isinstance(spec, SoftmaxChannels):
            if pos != len(specs) - 1:
                raise ShapeError("SoftmaxChannels is only allowed as the final layer")
        elif not isinstance(spec, Relu):
            raise ShapeError(f"unknown layer spec {spec!r}")


def network_init(specs: Sequence[LayerSpec], seed: int) -> Network:
    """He-initialized weights from a seeded PCG64 stream, zero biases."""
    _check_specs(specs)
    rng = np.random.default_rng(seed)
    params = []
    for spec in specs:
        if isinstance(spec, Dense):
            w = rng.standard_normal((spec.in_features, spec.out_features))
            w *= math.sqrt(2.0 / spec.in_features)
            params.append({"W": w, "b": np.zeros(spec.out_features)})
        elif isinstance(spec, Conv2d):
            k = spec.kernel
            fan_in = k * k * spec.in_channels
            w = rng.standard_normal((k, k, spec.in_channels, spec.out_channels))
            w *= math.sqrt(2.0 / fan_in)
            params.append({"W": w, "b": np.zeros(spec.out_channels)})
        else:
            params.append({})
    return Network(specs, params, seed)


def fcn_specs(in_channels: int, out_channels: int, hidden: int = 8) -> list[LayerSpec]:
    """Three-conv fully convolutional net ending in a channel softmax."""
    return [
        Conv2d(in_channels, hidden),
        Relu(),
        Conv2d(hidden, hidden),
        Relu(),
        Conv2d(hidden, out_channels),
        SoftmaxChannels(),
    ]


def mlp_specs(in_features: int = 2, hidden: int = 10, out_features: int = 2) -> list[LayerSpec]:
    return [Dense(in_features, hidden), Relu(), Dense(hidden, out_features), SoftmaxChannels()]


# -- layer kernels ------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # B,H,W,C,k,k
    b, h, w, c = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, k * k * c)


def _col2im(dcols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    b, h, w, c = shape
    pad = k // 2
    d = dcols.reshape(b, h, w, k, k, c)
    dxp = np.zeros((b, h + 2 * pad, w + 2 * pad, c))
    for di in range(k):
        for dj in range(k):
            dxp[:, di : di + h, dj : dj + w, :] += d[:, :, :, di, dj, :]
    return dxp[:, pad : pad + h, pad : pad + w, :]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    net_id: int
    input_shape: tuple
    output_shape: tuple
    records: list = field(default_factory=list)


def forward(net: Network, x) -> tuple[np.ndarray, ForwardCache]:
    a = np.asarray(x, dtype=np.float64)
    cache = ForwardCache(id(net), a.shape, ())
    for pos, (spec, p) in enumerate(zip(net.specs, net.params)):
        if isinstance(spec, Dense):
            if a.shape[-1] != spec.in_features:
                raise ShapeError(f"layer {pos} expects {spec.in_features} features, got {a.shape}")
            cache.records.append(a)
            a = a @ p["W"] + p["b"]
        elif isinstance(spec, Conv2d):
            if a.ndim < 3 or a.shape[-1] != spec.in_channels:
                raise ShapeError(f"layer {pos} expects (..., H, W, {spec.in_channels}), got {a.shape}")
            lead = a.shape[:-3]
            x4 = a.reshape((-1,) + a.shape[-3:])
            cols = _im2col(x4, spec.kernel)
            out = cols @ p["W"].reshape(-1, spec.out_channels) + p["b"]
            cache.records.append((cols, x4.shape, lead))
            a = out.reshape(lead + x4.shape[1:3] + (spec.out_channels,))
        elif isinstance(spec, Relu):
            cache.records.append(a)
            a = np.maximum(a, 0.0)
        else:
            a = _softmax(a)
            cache.records.append(a)
    cache.output_shape = a.shape
    return a, cache


def predict(net: Network, x) -> np.ndarray:
    return forward(net, x)[0]


def backward(net: Network, cache: ForwardCache, grad_output) -> tuple[list[dict], np.ndarray]:
    """Reverse pass. Returns per-layer parameter gradients and the input gradient."""
    if cache.net_id != id(net) or len(cache.records) != len(net.specs):
        raise StateError("cache was not produced by this network")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.output_shape:
        raise StateError(f"grad_output {g.shape} does not match output {cache.output_shape}")
    grads: list[dict] = [{} for _ in net.specs]
    for pos in range(len(net.specs) - 1, -1, -1):
        spec, p, rec = net.specs[pos], net.params[pos], cache.records[pos]
        if isinstance(spec, Dense):
            x2 = rec.reshape(-1, spec.in_features)
            g2 = g.reshape(-1, spec.out_features)
            grads[pos] = {"W": x2.T @ g2, "b": g2.sum(axis=0)}
            g = g @ p["W"].T
        elif isinstance(spec, Conv2d):
            cols, shape4, lead = rec
            g2 = g.reshape(-1, spec.out_channels)
            w2 = p["W"].reshape(-1, spec.out_channels)
            grads[pos] = {"W": (cols.T @ g2).reshape(p["W"].shape), "b": g2.sum(axis=0)}
            g = _col2im(g2 @ w2.T, shape4, spec.kernel).reshape(lead + shape4[1:])
        elif isinstance(spec, Relu):
            g = g * (rec > 0.0)
        else:
            s = rec
            g = s * (g - np.sum(g * s, axis=-1, keepdims=True))
    return grads, g


# -- optimization -------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    adam: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    loss: str = "cas"
    alpha: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.loss not in LOSS_KINDS:
            raise ParameterError(f"loss must be one of {LOSS_KINDS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class OptimizerState:
    step: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)


def optimizer_step(
    net: Network, grads: list[dict], cfg: TrainConfig, state: OptimizerState | None = None
) -> tuple[Network, OptimizerState]:
    """Apply one SGD-momentum or Adam update to ``net`` in place.

    SGD keeps a velocity ``v <- m*v + g`` and steps ``w <- w - lr*v``.
    """
    if len(grads) != len(net.params):
        raise ShapeError("one gradient dict per layer required")
    for layer, g in zip(net.params, grads):
        if set(layer) != set(g) or any(layer[k].shape != np.shape(g[k]) for k in layer):
            raise ShapeError("gradient shapes do not match parameters")
    if state is None:
        state = OptimizerState()
    if not state.first:
        state.first = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
        if cfg.adam:
            state.second = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
    state.step += 1
    t = state.step
    for i, layer in enumerate(net.params):
        for k, w in layer.items():
            g = grads[i][k]
            if cfg.adam:
                m = state.first[i][k] = cfg.beta1 * state.first[i][k] + (1 - cfg.beta1) * g
                v = state.second[i][k] = cfg.beta2 * state.second[i][k] + (1 - cfg.beta2) * g * g
                m_hat = m / (1 - cfg.beta1**t)
                v_hat = v / (1 - cfg.beta2**t)
                w -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
            else:
                v = state.first[i][k] = cfg.momentum * state.first[i][k] + g
                w -= cfg.learning_rate * v
    return net, state


def fit(
    net: Network,
    inputs: np.ndarray,
    targets: Sequence,
    cfg: TrainConfig,
    log_stride: int = 10,
    on_step: Callable[[int, float], None] | None = None,
) -> list[tuple[int, float]]:
    """Mini-batch training; returns the (step, batch loss) log every ``log_stride`` steps.

    ``inputs`` has a leading sample axis and ``targets[i]`` is the target of
    sample ``i`` in the form the configured loss expects.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    if len(targets) != n:
        raise ShapeError(f"{n} inputs but {len(targets)} targets")
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState()
    history = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            out, cache = forward(net, inputs[idx])
            loss, g = batch_loss(cfg.loss, out, [targets[i] for i in idx], cfg.alpha)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            if step % log_stride == 0:
                history.append((step, loss))
            if on_step is not None:
                on_step(step, loss)
            grads, _ = backward(net, cache, g)
            optimizer_step(net, grads, cfg, state)
            step += 1
    return history


# -- gradient checking ---------------------------------------------------------


def gradcheck(
    net: Network,
    inputs,
    targets: Sequence,
    kind: str = "cas",
    alpha: float = 0.5,
    h: float = 1e-5,
    perturb: float = 0.0,
) -> float:
    """Largest relative gap between backprop and central differences.

    Every parameter is perturbed by ``±h``. The loss difference is summed
    from per-piece differences (see ``losses.loss_terms``) so pieces the
    perturbation does not reach cancel exactly. The relative error of each
    entry uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator. ``perturb`` is
    added to every analytic gradient entry; it exists so a harness can prove
    the check fails when the gradient is wrong.
    """
    x = np.asarray(inputs, dtype=np.float64)

    def loss_at() -> np.ndarray:
        out, _ = forward(net, x)
        pieces = loss_terms(kind, out, targets, alpha)
        if not np.all(np.isfinite(pieces)):
            raise NumericError("loss is not finite")
        return pieces

    out, cache = forward(net, x)
    value, g = batch_loss(kind, out, targets, alpha)
    if not math.isfinite(value):
        raise NumericError("loss is not finite")
    grads, _ = backward(net, cache, g)
    worst = 0.0
    for i, name, w in net.named_parameters():
        analytic = grads[i][name] + perturb
        flat = w.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            plus = loss_at()
            flat[j] = keep - h
            minus = loss_at()
            flat[j] = keep
            numeric = math.fsum(plus - minus) / (2.0 * h)
            a = analytic.reshape(-1)[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
