"""Dense layer primitives with hand-derived gradients.

Activations are plain numpy arrays laid out as (n, c, h, w).  Runtime code
uses float32; the gradient tests run everything in float64.  Every function
here is pure: nothing mutates its inputs, batchnorm hands back fresh running
statistics instead of updating them in place.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import as_strided

from owleyes.errors import DimensionError, NumericError


@dataclass
class ConvParams:
    kernels: np.ndarray  # (out_ch, in_ch, 3, 3)
    bias: np.ndarray  # (out_ch,)

    def __post_init__(self):
        if self.kernels.ndim != 4 or self.kernels.shape[2:] != (3, 3):
            raise DimensionError(f"conv kernels must be (out, in, 3, 3), got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise DimensionError("conv bias length must equal out_ch")

    @property
    def in_ch(self):
        return self.kernels.shape[1]

    @property
    def out_ch(self):
        return self.kernels.shape[0]


@dataclass
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")

    @classmethod
    def identity(cls, ch, dtype=np.float32):
        return cls(
            gamma=np.ones(ch, dtype=dtype),
            beta=np.zeros(ch, dtype=dtype),
            running_mean=np.zeros(ch, dtype=dtype),
            running_var=np.ones(ch, dtype=dtype),
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


@dataclass
class FCParams:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError("fc weights must be (out, in) with bias of length out")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class PoolContext:
    # Row-major position (0..3) of the winner inside each 2x2 window.
    argmax_index: np.ndarray
    input_shape: tuple = field(default=())


def _check4(x, name="x"):
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")


# --------------------------------------------------------------------- conv


def _im2col(x):
    # Column layout is (kernel row, kernel col, channel).  In channels-last
    # padded storage the 3 kernel columns x c channels of one window row are
    # contiguous, so each window is viewed as 3 runs of 3*c values.
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x.transpose(0, 2, 3, 1)
    s_n, s_h, s_w, s_c = xp.strides
    win = as_strided(xp, shape=(n, h, w, 3, 3 * c), strides=(s_n, s_h, s_w, s_h, s_c), writeable=False)
    return win.reshape(n * h * w, 9 * c)


def _kernel_matrix(kernels):
    return kernels.transpose(0, 2, 3, 1).reshape(kernels.shape[0], -1)


def conv2d_forward(x, p):
    """Returns (y, cols); ``cols`` is the im2col matrix reused by the backward pass."""
    _check4(x)
    if x.shape[1] != p.in_ch:
        raise DimensionError(f"conv2d expects {p.in_ch} input channels, got {x.shape[1]}")
    n, _, h, w = x.shape
    cols = _im2col(x)
    out = cols @ _kernel_matrix(p.kernels).T
    out += p.bias
    y = np.ascontiguousarray(out.reshape(n, h, w, p.out_ch).transpose(0, 3, 1, 2))
    return y, cols


def conv2d(x, p):
    """3x3 cross-correlation, stride 1, zero padding 1."""
    return conv2d_forward(x, p)[0]


def conv2d_grad(x, p, dy, cols=None, need_dx=True):
    """Gradients (dx, dkernels, dbias) of a scalar loss given dL/dy.

    dx is itself a padded correlation of dy with the kernels rotated by 180
    degrees and in/out channels swapped.
    """
    _check4(x)
    if x.shape[1] != p.in_ch:
        raise DimensionError(f"conv2d expects {p.in_ch} input channels, got {x.shape[1]}")
    n, c, h, w = x.shape
    if dy.shape != (n, p.out_ch, h, w):
        raise DimensionError(f"dy shape {dy.shape} does not match conv output")
    if cols is None:
        cols = _im2col(x)
    dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, p.out_ch)
    dk = (dy_flat.T @ cols).reshape(p.out_ch, 3, 3, c).transpose(0, 3, 1, 2)
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        flipped = p.kernels.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        dx = conv2d(dy, ConvParams(np.ascontiguousarray(flipped), np.zeros(c, dtype=dy.dtype)))
    return dx, np.ascontiguousarray(dk), db


# ---------------------------------------------------------------- batchnorm


def batchnorm(x, p, mode="train"):
    """Per-channel normalization.

    Returns ``(y, stats)`` where ``stats`` is a new BNParams carrying the
    updated running statistics in train mode (``p`` itself in infer mode).
    Running variance is tracked with the unbiased estimator.
    """
    _check4(x)
    if x.shape[1] != p.channels:
        raise DimensionError(f"batchnorm expects {p.channels} channels, got {x.shape[1]}")
    g = p.gamma.reshape(1, -1, 1, 1)
    b = p.beta.reshape(1, -1, 1, 1)
    if mode == "infer":
        inv = 1.0 / np.sqrt(p.running_var + p.epsilon)
        xhat = (x - p.running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        return (g * xhat + b).astype(x.dtype, copy=False), p
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if m < 2:
        raise DimensionError("train-mode batchnorm needs at least 2 values per channel")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    mom = p.momentum
    stats = replace(
        p,
        running_mean=((1 - mom) * p.running_mean + mom * mean).astype(p.running_mean.dtype),
        running_var=((1 - mom) * p.running_var + mom * var * (m / (m - 1))).astype(p.running_var.dtype),
    )
    return (g * xhat + b).astype(x.dtype, copy=False), stats


def batchnorm_grad(x, p, dy, mode="train"):
    """Gradients (dx, dgamma, dbeta)."""
    _check4(x)
    if x.shape[1] != p.channels:
        raise DimensionError(f"batchnorm expects {p.channels} channels, got {x.shape[1]}")
    axes = (0, 2, 3)
    if mode == "infer":
        inv = 1.0 / np.sqrt(p.running_var + p.epsilon)
        xhat = (x - p.running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
        dx = dy * (p.gamma * inv).reshape(1, -1, 1, 1)
        return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x - mean) * inv
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * p.gamma.reshape(1, -1, 1, 1)
    dx = (inv / m) * (
        m * dxhat
        - dxhat.sum(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
    )
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# --------------------------------------------------------------------- relu


def relu(x):
    return np.maximum(x, 0)


def relu_grad(x, dy):
    # Subgradient at exactly zero is zero.
    return np.where(x > 0, dy, 0).astype(dy.dtype, copy=False)


# --------------------------------------------------------------------- pool


def maxpool2x2(x):
    _check4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)  # first occurrence wins ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, PoolContext(argmax_index=idx, input_shape=x.shape)


def maxpool2x2_grad(ctx, dy):
    n, c, h, w = ctx.input_shape
    if dy.shape != (n, c, h // 2, w // 2):
        raise DimensionError(f"dy shape {dy.shape} does not match pool output")
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, ctx.argmax_index[..., None], dy[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


# ---------------------------------------------------------- fully connected


def fully_connected(x, p):
    """y = W x + b for a flat vector, or row-wise for an (n, in_dim) batch."""
    if x.shape[-1] != p.in_dim:
        raise DimensionError(f"fully_connected expects length {p.in_dim}, got {x.shape[-1]}")
    return x @ p.weights.T + p.bias


def fully_connected_grad(x, p, dy):
    """Gradients (dx, dW, db); batched inputs accumulate over rows."""
    if x.shape[-1] != p.in_dim or dy.shape[-1] != p.out_dim:
        raise DimensionError("fully_connected_grad shape mismatch")
    if x.ndim == 1:
        return p.weights.T @ dy, np.outer(dy, x), dy.copy()
    return dy @ p.weights, dy.T @ x, dy.sum(axis=0)


# ------------------------------------------------------------------ softmax


def softmax(logits, axis=-1):
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Returns (probs, loss, dlogits) for a single sample."""
    logits = np.asarray(logits)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise DimensionError("softmax_cross_entropy needs a flat vector of at least 2 logits")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    probs = softmax(logits)
    z = logits - logits.max()
    loss = float(np.log(np.exp(z).sum()) - z[label])
    dlogits = probs.copy()
    dlogits[label] -= 1
    return probs, loss, dlogits


def softmax_cross_entropy_batch(logits, labels):
    """Mean loss over a batch; returns (probs, loss, dlogits) with dlogits already divided by n."""
    n = logits.shape[0]
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range")
    probs = softmax(logits, axis=1)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    d = probs.copy()
    d[np.arange(n), labels] -= 1
    return probs, loss, d / n


# ---------------------------------------------------------------- optimizer


def sgd_step(params, velocity, grads, lr, momentum):
    """Momentum SGD: v <- momentum*v + g, p <- p - lr*v.  Returns new (params, velocity)."""
    if params.shape != velocity.shape or params.shape != grads.shape:
        raise DimensionError("sgd_step arrays must share one shape")
    if lr < 0 or not 0 <= momentum < 1:
        raise ValueError("need lr >= 0 and momentum in [0, 1)")
    v = momentum * velocity + grads
    return (params - lr * v).astype(params.dtype, copy=False), v.astype(velocity.dtype, copy=False)


# ------------------------------------------------------------------- oracle


def finite_difference_oracle(f, x, eps=1e-6):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
