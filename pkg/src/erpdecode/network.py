"""Small convolutional network for binary epoch classification.

Layer stack: a channel-wise spatial convolution (each kernel spans all
channels at one time point, collapsing the epoch to one feature map per
kernel), ReLU, then two temporal convolution + ReLU + max-pool stages, then
a fully connected layer producing a single logit mapped through a sigmoid.

All math runs in float64.  Forward/backward are implemented directly so
gradients can be verified against central finite differences; the batch
routines below are the same code path the per-epoch API wraps.

Initialization draws from ``numpy.random.default_rng(seed)`` (the PCG64
generator), weights ~ Normal(0, sqrt(2 / fan_in)) in the fixed order
spatial, temporal-1, temporal-2, fully-connected; biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOSS_EPS = 1e-12  # probability clamp inside the cross-entropy loss
_LOGIT_CLIP = 500.0  # keeps sigmoid output strictly inside (0, 1) in float64

# Serialization / flattening order for parameter arrays.
PARAM_FIELDS = (
    "spatial_w", "spatial_b",
    "t1_w", "t1_b",
    "t2_w", "t2_b",
    "fc_w", "fc_b",
)


@dataclass(frozen=True)
class Architecture:
    """Shape constants; everything the serialized header records."""

    n_channels: int
    n_samples: int
    n_spatial_kernels: int = 8
    n_temporal1_kernels: int = 16
    temporal1_len: int = 11
    pool1_width: int = 2
    n_temporal2_kernels: int = 16
    temporal2_len: int = 11
    pool2_width: int = 2

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {value!r}")
        if self.t2_out < 1:
            raise ValueError(
                f"n_samples={self.n_samples} too small: two conv+pool stages leave "
                f"{self.t2_out} time points"
            )

    # time-axis lengths after each stage
    @property
    def t1_conv_out(self) -> int:
        return self.n_samples - self.temporal1_len + 1

    @property
    def t1_out(self) -> int:
        return self.t1_conv_out // self.pool1_width

    @property
    def t2_conv_out(self) -> int:
        return self.t1_out - self.temporal2_len + 1

    @property
    def t2_out(self) -> int:
        return self.t2_conv_out // self.pool2_width

    @property
    def fc_in(self) -> int:
        return self.n_temporal2_kernels * self.t2_out

    @property
    def n_params(self) -> int:
        return (
            self.n_spatial_kernels * self.n_channels + self.n_spatial_kernels
            + self.n_temporal1_kernels * self.n_spatial_kernels * self.temporal1_len
            + self.n_temporal1_kernels
            + self.n_temporal2_kernels * self.n_temporal1_kernels * self.temporal2_len
            + self.n_temporal2_kernels
            + self.fc_in + 1
        )

    def header_fields(self) -> tuple[int, ...]:
        return (
            self.n_channels, self.n_samples, self.n_spatial_kernels,
            self.n_temporal1_kernels, self.temporal1_len, self.pool1_width,
            self.n_temporal2_kernels, self.temporal2_len, self.pool2_width,
            self.fc_in,
        )

    @classmethod
    def from_header_fields(cls, values: tuple[int, ...]) -> "Architecture":
        if len(values) != 10:
            raise ValueError(f"expected 10 header fields, got {len(values)}")
        arch = cls(*[int(v) for v in values[:9]])
        if arch.fc_in != int(values[9]):
            raise ValueError(
                f"header fc width {values[9]} inconsistent with architecture ({arch.fc_in})"
            )
        return arch


def _param_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    return {
        "spatial_w": (arch.n_spatial_kernels, arch.n_channels),
        "spatial_b": (arch.n_spatial_kernels,),
        "t1_w": (arch.n_temporal1_kernels, arch.n_spatial_kernels, arch.temporal1_len),
        "t1_b": (arch.n_temporal1_kernels,),
        "t2_w": (arch.n_temporal2_kernels, arch.n_temporal1_kernels, arch.temporal2_len),
        "t2_b": (arch.n_temporal2_kernels,),
        "fc_w": (arch.fc_in,),
        "fc_b": (1,),
    }


@dataclass
class Network:
    arch: Architecture
    spatial_w: np.ndarray
    spatial_b: np.ndarray
    t1_w: np.ndarray
    t1_b: np.ndarray
    t2_w: np.ndarray
    t2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def __post_init__(self) -> None:
        shapes = _param_shapes(self.arch)
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    def param_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def params_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.param_arrays()])

    @classmethod
    def from_params_vector(cls, arch: Architecture, vector: np.ndarray) -> "Network":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {vector.shape}")
        shapes = _param_shapes(arch)
        parts: dict[str, np.ndarray] = {}
        offset = 0
        for name in PARAM_FIELDS:
            size = int(np.prod(shapes[name]))
            parts[name] = vector[offset:offset + size].reshape(shapes[name]).copy()
            offset += size
        return cls(arch=arch, **parts)

    def copy(self) -> "Network":
        return Network(self.arch, **{name: arr.copy() for name, arr in self.param_arrays()})


@dataclass
class Gradients:
    """One array per parameter array of the network, identical shapes."""

    spatial_w: np.ndarray
    spatial_b: np.ndarray
    t1_w: np.ndarray
    t1_b: np.ndarray
    t2_w: np.ndarray
    t2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def param_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.param_arrays()])

    @classmethod
    def zeros_like(cls, net: Network) -> "Gradients":
        return cls(**{name: np.zeros_like(arr) for name, arr in net.param_arrays()})

    def check_finite(self) -> None:
        for name, arr in self.param_arrays():
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite gradient in {name}")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    init_seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def relu(z: np.ndarray) -> np.ndarray:
    """Elementwise max(0, z)."""
    return np.maximum(0.0, np.asarray(z))


def sigmoid(z: np.ndarray) -> np.ndarray:
    # clipping the logit keeps the output strictly inside (0, 1)
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)))


def conv2d_valid(x: np.ndarray, kernel: np.ndarray, bias: float = 0.0) -> np.ndarray:
    """Valid (no padding) cross-correlation of a 2-D input with a 2-D kernel.

    out[p, q] = bias + sum_{i,j} x[p+i, q+j] * kernel[i, j]; output dims are
    input dims minus kernel dims plus one per axis.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    kernel = np.atleast_2d(np.asarray(kernel, dtype=np.float64))
    if kernel.shape[0] > x.shape[0] or kernel.shape[1] > x.shape[1]:
        raise ValueError(f"kernel {kernel.shape} larger than input {x.shape}")
    windows = sliding_window_view(x, kernel.shape)
    return np.einsum("pqij,ij->pq", windows, kernel) + bias


def bce_loss(p: float, t: int) -> float:
    """Binary cross-entropy -t*log(p) - (1-t)*log(1-p), p clamped to [eps, 1-eps]."""
    p = min(max(float(p), LOSS_EPS), 1.0 - LOSS_EPS)
    t = float(t)
    return -t * np.log(p) - (1.0 - t) * np.log(1.0 - p)


# ---------------------------------------------------------------------------
# forward / backward (batched internally; the per-epoch API wraps batch 1)
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Every intermediate needed by backward, batch-first."""

    x: np.ndarray          # (B, C, T)
    a_spatial: np.ndarray  # (B, Ks, T) after ReLU
    z1: np.ndarray         # (B, K1, t1_conv_out) pre-activation
    a1p: np.ndarray        # (B, K1, t1_out) after ReLU + pool
    pool1_idx: np.ndarray  # argmax offsets within each pool window
    z2: np.ndarray
    a2p: np.ndarray
    pool2_idx: np.ndarray
    p: np.ndarray          # (B,) probabilities


def _maxpool(a: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool over the last axis; trailing remainder dropped.

    Ties resolve to the first maximal position so backward routing is
    deterministic.
    """
    n_out = a.shape[-1] // width
    trimmed = a[..., :n_out * width].reshape(*a.shape[:-1], n_out, width)
    idx = trimmed.argmax(axis=-1)
    return np.take_along_axis(trimmed, idx[..., None], axis=-1)[..., 0], idx


def _conv_temporal(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, M, T) cross-correlated with (K, M, L) kernels -> (B, K, T-L+1)."""
    windows = sliding_window_view(a, w.shape[-1], axis=-1)  # (B, M, T', L)
    return np.einsum("kml,bmtl->bkt", w, windows, optimize=True) + b[None, :, None]


def forward_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Probabilities and cache for a batch of epochs, shape (B, C, T)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (net.arch.n_channels, net.arch.n_samples):
        raise ValueError(
            f"input shape {x.shape} does not match architecture "
            f"(B, {net.arch.n_channels}, {net.arch.n_samples})"
        )
    z_s = np.einsum("kc,bct->bkt", net.spatial_w, x) + net.spatial_b[None, :, None]
    a_s = relu(z_s)

    z1 = _conv_temporal(a_s, net.t1_w, net.t1_b)
    a1, pool1_idx = _maxpool(relu(z1), net.arch.pool1_width)

    z2 = _conv_temporal(a1, net.t2_w, net.t2_b)
    a2, pool2_idx = _maxpool(relu(z2), net.arch.pool2_width)

    flat = a2.reshape(x.shape[0], -1)
    z_fc = flat @ net.fc_w + net.fc_b[0]
    p = sigmoid(z_fc)
    cache = ForwardCache(x, a_s, z1, a1, pool1_idx, z2, a2, pool2_idx, p)
    return p, cache


def _unpool(grad_pooled: np.ndarray, idx: np.ndarray, width: int, out_len: int) -> np.ndarray:
    """Scatter pooled gradients back to the argmax positions."""
    b, k, n_out = grad_pooled.shape
    grad = np.zeros((b, k, out_len), dtype=np.float64)
    positions = np.arange(n_out) * width + idx
    np.put_along_axis(grad, positions, grad_pooled, axis=-1)
    return grad


def backward_batch(net: Network, cache: ForwardCache, t: np.ndarray) -> Gradients:
    """Mean gradient of the cross-entropy loss over the cached batch."""
    t = np.asarray(t, dtype=np.float64)
    batch = cache.x.shape[0]
    if t.shape != (batch,):
        raise ValueError(f"labels shape {t.shape} does not match batch of {batch}")

    # d(mean loss)/d(logit); zero where the loss clamp is active
    p = cache.p
    dz_fc = np.where((p > LOSS_EPS) & (p < 1.0 - LOSS_EPS), p - t, 0.0) / batch

    flat = cache.a2p.reshape(batch, -1)
    g_fc_w = flat.T @ dz_fc
    g_fc_b = np.array([dz_fc.sum()])
    d_flat = np.outer(dz_fc, net.fc_w)

    d_a2p = d_flat.reshape(cache.a2p.shape)
    d_z2 = _unpool(d_a2p, cache.pool2_idx, net.arch.pool2_width, net.arch.t2_conv_out)
    d_z2 *= cache.z2 > 0

    windows1 = sliding_window_view(cache.a1p, net.arch.temporal2_len, axis=-1)
    g_t2_w = np.einsum("bkt,bmtl->kml", d_z2, windows1, optimize=True)
    g_t2_b = d_z2.sum(axis=(0, 2))
    # gradient w.r.t. temporal-1 output: full correlation with flipped kernels
    pad = net.arch.temporal2_len - 1
    d_z2_padded = np.pad(d_z2, ((0, 0), (0, 0), (pad, pad)))
    windows_dz2 = sliding_window_view(d_z2_padded, net.arch.temporal2_len, axis=-1)
    d_a1p = np.einsum("kml,bktl->bmt", net.t2_w[:, :, ::-1], windows_dz2, optimize=True)

    d_z1 = _unpool(d_a1p, cache.pool1_idx, net.arch.pool1_width, net.arch.t1_conv_out)
    d_z1 *= cache.z1 > 0

    windows_s = sliding_window_view(cache.a_spatial, net.arch.temporal1_len, axis=-1)
    g_t1_w = np.einsum("bkt,bmtl->kml", d_z1, windows_s, optimize=True)
    g_t1_b = d_z1.sum(axis=(0, 2))
    pad = net.arch.temporal1_len - 1
    d_z1_padded = np.pad(d_z1, ((0, 0), (0, 0), (pad, pad)))
    windows_dz1 = sliding_window_view(d_z1_padded, net.arch.temporal1_len, axis=-1)
    d_a_s = np.einsum("kml,bktl->bmt", net.t1_w[:, :, ::-1], windows_dz1, optimize=True)

    d_z_s = d_a_s * (cache.a_spatial > 0)
    g_spatial_w = np.einsum("bkt,bct->kc", d_z_s, cache.x, optimize=True)
    g_spatial_b = d_z_s.sum(axis=(0, 2))

    return Gradients(
        spatial_w=g_spatial_w, spatial_b=g_spatial_b,
        t1_w=g_t1_w, t1_b=g_t1_b,
        t2_w=g_t2_w, t2_b=g_t2_b,
        fc_w=g_fc_w, fc_b=g_fc_b,
    )


def forward(net: Network, epoch: np.ndarray) -> tuple[float, ForwardCache]:
    """Probability that a single epoch (C, T) is a target, plus the cache."""
    epoch = np.asarray(epoch, dtype=np.float64)
    if epoch.ndim != 2:
        raise ValueError(f"epoch must be 2-D (channels, samples), got {epoch.shape}")
    p, cache = forward_batch(net, epoch[None])
    return float(p[0]), cache


def backward(net: Network, cache: ForwardCache, t: int) -> Gradients:
    """Exact gradients of bce_loss(forward(net, epoch), t) for one epoch."""
    if cache.x.shape[0] != 1:
        raise ValueError("cache does not come from a single-epoch forward call")
    return backward_batch(net, cache, np.array([t], dtype=np.float64))


def batch_gradients(net: Network, x: np.ndarray, t: np.ndarray) -> tuple[float, Gradients]:
    """Mean loss and mean gradients over a batch, in one pass."""
    p, cache = forward_batch(net, x)
    grads = backward_batch(net, cache, np.asarray(t, dtype=np.float64))
    p_c = np.clip(p, LOSS_EPS, 1.0 - LOSS_EPS)
    t = np.asarray(t, dtype=np.float64)
    loss = float(np.mean(-t * np.log(p_c) - (1.0 - t) * np.log(1.0 - p_c)))
    return loss, grads


# ---------------------------------------------------------------------------
# parameter updates and initialization
# ---------------------------------------------------------------------------

def sgd_step(net: Network, grads: Gradients, lr: float) -> Network:
    """In-place update p <- p - lr * g; returns the same network."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    grads.check_finite()
    for (name, param), (gname, grad) in zip(net.param_arrays(), grads.param_arrays()):
        if param.shape != grad.shape:
            raise ValueError(f"gradient {gname} shape {grad.shape} != parameter {param.shape}")
        param -= lr * grad
    return net


def init_network(
    n_channels: int,
    n_samples: int,
    seed: int,
    arch: Architecture | None = None,
) -> Network:
    """Fresh network with Normal(0, sqrt(2/fan_in)) weights and zero biases."""
    if arch is None:
        arch = Architecture(n_channels=n_channels, n_samples=n_samples)
    elif (arch.n_channels, arch.n_samples) != (n_channels, n_samples):
        arch = replace(arch, n_channels=n_channels, n_samples=n_samples)
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(arch)
    fan_in = {
        "spatial_w": arch.n_channels,
        "t1_w": arch.n_spatial_kernels * arch.temporal1_len,
        "t2_w": arch.n_temporal1_kernels * arch.temporal2_len,
        "fc_w": arch.fc_in,
    }
    params: dict[str, np.ndarray] = {}
    for name in PARAM_FIELDS:
        if name in fan_in:
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in[name]), shapes[name])
        else:
            params[name] = np.zeros(shapes[name])
    return Network(arch=arch, **params)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(
    net: Network,
    epoch: np.ndarray,
    t: int,
    step: float = 1e-6,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Per parameter: |g_fd - g| / max(|g_fd| + |g|, 1e-12), sweeping every
    entry of every parameter array.
    """
    _, cache = forward(net, epoch)
    analytic = backward(net, cache, t)
    worst = 0.0
    epoch_b = np.asarray(epoch, dtype=np.float64)[None]
    for (name, param), (_, grad) in zip(net.param_arrays(), analytic.param_arrays()):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + step
            loss_plus = bce_loss(float(forward_batch(net, epoch_b)[0][0]), t)
            flat_p[i] = original - step
            loss_minus = bce_loss(float(forward_batch(net, epoch_b)[0][0]), t)
            flat_p[i] = original
            g_fd = (loss_plus - loss_minus) / (2.0 * step)
            rel = abs(g_fd - flat_g[i]) / max(abs(g_fd) + abs(flat_g[i]), 1e-12)
            worst = max(worst, rel)
    return worst
