"""The screenshot classifier: architecture, preprocessing, training and evaluation.

Twelve 3x3 conv layers, each followed by batchnorm and ReLU, with 2x2 max
pools after every second conv, then four fully connected layers (ReLU
between them, none after the last).  The last layer has two outputs:
index 0 is "clean", index 1 is "bug".
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from owleyes import numcore as nc
from owleyes.errors import ConfigError, DimensionError, NumericError
from owleyes.imaging import bilinear_resize, load_image, rotate_cw
from owleyes.manifest import DatasetManifest
from owleyes.rng import SplitMix64, mix_seed, uniform_block

log = logging.getLogger(__name__)

BUG = 1
CLEAN = 0


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple  # (channels, height, width)
    conv_channels: tuple
    pool_after: tuple  # 1-based conv indices followed by a 2x2 max pool
    fc_widths: tuple
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "pool_after", tuple(sorted(int(v) for v in self.pool_after)))
        object.__setattr__(self, "fc_widths", tuple(int(v) for v in self.fc_widths))
        self.validate()

    def validate(self):
        c, h, w = self.input_dims
        if c != 3:
            raise ConfigError("input must have 3 channels")
        if not self.conv_channels or not self.fc_widths:
            raise ConfigError("need at least one conv and one fc layer")
        if any(v <= 0 for v in self.conv_channels + self.fc_widths):
            raise ConfigError("layer widths must be positive")
        if len(set(self.pool_after)) != len(self.pool_after):
            raise ConfigError("duplicate pool position")
        if any(not 1 <= i <= len(self.conv_channels) for i in self.pool_after):
            raise ConfigError("pool positions must name existing conv layers")
        div = 2 ** len(self.pool_after)
        if h <= 0 or w <= 0 or h % div or w % div:
            raise ConfigError(f"input {h}x{w} must be divisible by {div}")
        if self.fc_widths[-1] != 2:
            raise ConfigError("last fc width must be 2")

    @property
    def height(self):
        return self.input_dims[1]

    @property
    def width(self):
        return self.input_dims[2]

    @property
    def feature_dims(self):
        div = 2 ** len(self.pool_after)
        return (self.conv_channels[-1], self.height // div, self.width // div)

    @property
    def flatten_size(self):
        return math.prod(self.feature_dims)

    def to_dict(self):
        return {
            "name": self.name,
            "input_dims": list(self.input_dims),
            "conv_channels": list(self.conv_channels),
            "pool_after": list(self.pool_after),
            "fc_widths": list(self.fc_widths),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dims=d["input_dims"],
            conv_channels=d["conv_channels"],
            pool_after=d["pool_after"],
            fc_widths=d["fc_widths"],
            name=d.get("name", "custom"),
        )


CANONICAL = ModelConfig(
    input_dims=(3, 768, 448),
    conv_channels=(16, 16, 16, 16, 32, 32, 64, 64, 128, 128, 128, 128),
    pool_after=(2, 4, 6, 8, 10, 12),
    fc_widths=(4096, 1024, 128, 2),
    name="canonical",
)

DESK = ModelConfig(
    input_dims=(3, 192, 128),
    conv_channels=(8, 8, 8, 8, 16, 16, 24, 24, 32, 32, 32, 32),
    pool_after=(2, 4, 6, 8, 10, 12),
    fc_widths=(256, 64, 16, 2),
    name="desk",
)

PROFILES = {"canonical": CANONICAL, "desk": DESK}


def profile(name: str) -> ModelConfig:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass
class Model:
    config: ModelConfig
    convs: list
    bns: list
    fcs: list
    seed: int = 0

    def layer_names(self):
        names = []
        pools = set(self.config.pool_after)
        for i in range(1, len(self.convs) + 1):
            names += [f"conv{i}", f"bn{i}", f"relu{i}"]
            if i in pools:
                names.append(f"pool{i}")
        names.append("flatten")
        for j in range(1, len(self.fcs) + 1):
            names.append(f"fc{j}")
            if j < len(self.fcs):
                names.append(f"fc_relu{j}")
        return names

    def named_arrays(self, trainable_only=False):
        """(name, array) pairs in checkpoint order."""
        out = []
        for i, (cp, bp) in enumerate(zip(self.convs, self.bns), 1):
            out += [(f"conv{i}.kernels", cp.kernels), (f"conv{i}.bias", cp.bias)]
            out += [(f"bn{i}.gamma", bp.gamma), (f"bn{i}.beta", bp.beta)]
            if not trainable_only:
                out += [(f"bn{i}.running_mean", bp.running_mean), (f"bn{i}.running_var", bp.running_var)]
        for j, fp in enumerate(self.fcs, 1):
            out += [(f"fc{j}.weights", fp.weights), (f"fc{j}.bias", fp.bias)]
        return out

    def parameter_count(self, trainable_only=False):
        return sum(a.size for _, a in self.named_arrays(trainable_only))

    def astype(self, dtype):
        m = copy.deepcopy(self)
        for cp in m.convs:
            cp.kernels = cp.kernels.astype(dtype)
            cp.bias = cp.bias.astype(dtype)
        for bp in m.bns:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                setattr(bp, name, getattr(bp, name).astype(dtype))
        for fp in m.fcs:
            fp.weights = fp.weights.astype(dtype)
            fp.bias = fp.bias.astype(dtype)
        return m

    @property
    def dtype(self):
        return self.convs[0].kernels.dtype

    # Grad-CAM hooks -------------------------------------------------------

    def feature_maps(self, batch, mode="infer"):
        """Final conv-block activations (the tensor that gets flattened)."""
        _, cache = forward_pass(self, batch, mode)
        return cache.features

    def score_gradient(self, features, target):
        """d logit[target] / d features through the fully connected head (infer mode)."""
        n = features.shape[0]
        x = features.reshape(n, -1)
        acts = []
        for j, fp in enumerate(self.fcs):
            acts.append(x)
            x = nc.fully_connected(x, fp)
            if j < len(self.fcs) - 1:
                acts.append(x)
                x = nc.relu(x)
        d = np.zeros((n, self.fcs[-1].out_dim), dtype=x.dtype)
        d[:, target] = 1
        for j in reversed(range(len(self.fcs))):
            if j < len(self.fcs) - 1:
                d = nc.relu_grad(acts.pop(), d)
            d, _, _ = nc.fully_connected_grad(acts.pop(), self.fcs[j], d)
        return d.reshape(features.shape)


def _uniform_init(seed, index, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    u = uniform_block(mix_seed(seed, index), math.prod(shape))
    return ((2.0 * u - 1.0) * limit).reshape(shape).astype(dtype)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Fan-in scaled uniform weights (+-sqrt(6/fan_in)) drawn from SplitMix64, zero biases.

    Tensor k of the layer stack uses the stream seeded by mix_seed(seed, k).
    """
    config.validate()
    convs, bns, fcs = [], [], []
    index = 0
    in_ch = config.input_dims[0]
    for out_ch in config.conv_channels:
        k = _uniform_init(seed, index, (out_ch, in_ch, 3, 3), in_ch * 9, dtype)
        index += 1
        convs.append(nc.ConvParams(kernels=k, bias=np.zeros(out_ch, dtype=dtype)))
        bns.append(nc.BNParams.identity(out_ch, dtype))
        in_ch = out_ch
    in_dim = config.flatten_size
    for width in config.fc_widths:
        wts = _uniform_init(seed, index, (width, in_dim), in_dim, dtype)
        index += 1
        fcs.append(nc.FCParams(weights=wts, bias=np.zeros(width, dtype=dtype)))
        in_dim = width
    return Model(config=config, convs=convs, bns=bns, fcs=fcs, seed=int(seed))


# ------------------------------------------------------------ preprocessing


def preprocess_image(img: np.ndarray, height: int, width: int, dtype=np.float32) -> np.ndarray:
    """Rotate landscape to portrait, resize, and scale pixels to [-1, 1].  Returns (1, 3, H, W)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a non-empty (h, w, 3) raster, got shape {img.shape}")
    if img.shape[1] > img.shape[0]:
        img = rotate_cw(img)
    if img.shape[:2] != (height, width):
        arr = bilinear_resize(img[..., :3], height, width)
    else:
        arr = img[..., :3].astype(np.float64)
    arr = (arr / 255.0 - 0.5) / 0.5
    return arr.transpose(2, 0, 1)[None].astype(dtype)


# ------------------------------------------------------------ forward/back


@dataclass
class ForwardCache:
    mode: str
    steps: list = field(default_factory=list)  # (kind, index, input, aux)
    bn_stats: list = field(default_factory=list)
    features: Optional[np.ndarray] = None


def forward_pass(model: Model, batch: np.ndarray, mode: str = "infer"):
    """Returns (logits of shape (n, 2), cache)."""
    cfg = model.config
    if batch.ndim != 4 or batch.shape[1:] != cfg.input_dims:
        raise DimensionError(f"batch shape {batch.shape} does not match input dims {cfg.input_dims}")
    cache = ForwardCache(mode=mode)
    pools = set(cfg.pool_after)
    x = batch.astype(model.dtype, copy=False)
    for i, (cp, bp) in enumerate(zip(model.convs, model.bns)):
        y, cols = nc.conv2d_forward(x, cp)
        cache.steps.append(("conv", i, x, cols))
        x = y
        y, stats = nc.batchnorm(x, bp, mode)
        cache.steps.append(("bn", i, x, None))
        cache.bn_stats.append(stats)
        x = y
        cache.steps.append(("relu", i, x, None))
        x = nc.relu(x)
        if i + 1 in pools:
            x, ctx = nc.maxpool2x2(x)
            cache.steps.append(("pool", i, None, ctx))
    cache.features = x
    cache.steps.append(("flatten", 0, x.shape, None))
    x = x.reshape(x.shape[0], -1)
    for j, fp in enumerate(model.fcs):
        cache.steps.append(("fc", j, x, None))
        x = nc.fully_connected(x, fp)
        if j < len(model.fcs) - 1:
            cache.steps.append(("relu", -1, x, None))
            x = nc.relu(x)
    return x, cache


def backward_pass(model: Model, cache: ForwardCache, dlogits: np.ndarray, need_input_grad=True) -> dict:
    """Gradients of the loss w.r.t. every trainable array, keyed like Model.named_arrays.

    The gradient w.r.t. the input batch is stored under "input" when requested.
    """
    grads = {}
    d = dlogits
    for kind, idx, inp, aux in reversed(cache.steps):
        if kind == "fc":
            d, dw, db = nc.fully_connected_grad(inp, model.fcs[idx], d)
            grads[f"fc{idx + 1}.weights"] = dw
            grads[f"fc{idx + 1}.bias"] = db
        elif kind == "relu":
            d = nc.relu_grad(inp, d)
        elif kind == "flatten":
            d = d.reshape(inp)
        elif kind == "pool":
            d = nc.maxpool2x2_grad(aux, d)
        elif kind == "bn":
            d, dg, dbeta = nc.batchnorm_grad(inp, model.bns[idx], d, cache.mode)
            grads[f"bn{idx + 1}.gamma"] = dg
            grads[f"bn{idx + 1}.beta"] = dbeta
        elif kind == "conv":
            need_dx = idx > 0 or need_input_grad
            d, dk, db = nc.conv2d_grad(inp, model.convs[idx], d, cols=aux, need_dx=need_dx)
            grads[f"conv{idx + 1}.kernels"] = dk
            grads[f"conv{idx + 1}.bias"] = db
    if need_input_grad:
        grads["input"] = d
    return grads


def batch_loss(model: Model, batch, labels, mode="train", need_input_grad=False):
    """Mean cross-entropy; returns (loss, probs, grads, cache)."""
    logits, cache = forward_pass(model, batch, mode)
    probs, loss, dlogits = nc.softmax_cross_entropy_batch(logits, labels)
    grads = backward_pass(model, cache, dlogits.astype(logits.dtype), need_input_grad)
    return loss, probs, grads, cache


# ------------------------------------------------------------------- train


@dataclass
class TrainHyper:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr > 0 and momentum in [0, 1)")


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def to_dict(self):
        return {"loss": self.loss, "accuracy": self.accuracy, "warnings": self.warnings}


class ImageSource:
    """Preprocessed manifest images, cached in memory when they fit."""

    def __init__(self, manifest: DatasetManifest, config: ModelConfig, dtype=np.float32, cache_limit=1 << 30):
        self.manifest = manifest
        self.config = config
        self.dtype = dtype
        per = 3 * config.height * config.width * np.dtype(dtype).itemsize
        self.use_cache = per * len(manifest) <= cache_limit
        self._cache = {}

    def get(self, i):
        if i in self._cache:
            return self._cache[i]
        img = load_image(self.manifest.resolve(self.manifest.rows[i]))
        x = preprocess_image(img, self.config.height, self.config.width, self.dtype)[0]
        if self.use_cache:
            self._cache[i] = x
        return x

    def batch(self, indices):
        return np.stack([self.get(i) for i in indices])


def _permutation(rng: SplitMix64, n: int):
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randbelow(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def apply_gradients(model: Model, grads: dict, velocity: dict, lr: float, momentum: float):
    """In-place momentum SGD over every trainable array of ``model``."""
    for name, arr in model.named_arrays(trainable_only=True):
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(arr)
        new_p, velocity[name] = nc.sgd_step(arr, v, grads[name].astype(arr.dtype, copy=False), lr, momentum)
        arr[...] = new_p


def train(
    model: Model,
    manifest: DatasetManifest,
    hyper: TrainHyper,
    on_epoch: Optional[Callable] = None,
    images: Optional[ImageSource] = None,
):
    """Shuffled mini-batch momentum SGD.  Returns (trained copy of model, TrainHistory).

    ``on_epoch(epoch, history)`` may return True to stop early.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    model = copy.deepcopy(model)
    history = TrainHistory()
    labels = np.array(manifest.labels())
    if len(set(labels.tolist())) < 2:
        msg = "manifest contains a single class; training proceeds anyway"
        log.warning(msg)
        history.warnings.append(msg)
    images = images or ImageSource(manifest, model.config, model.dtype)
    rng = SplitMix64(hyper.seed)
    velocity = {}
    n = len(manifest)
    for epoch in range(hyper.epochs):
        order = _permutation(rng, n)
        total_loss = 0.0
        correct = 0
        seen = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2 and n >= 2:
                # A lone trailing sample would make train-mode batchnorm degenerate.
                idx = order[start - 1:start + 1]
            batch = images.batch(idx)
            y = labels[idx]
            loss, probs, grads, cache = batch_loss(model, batch, y, "train")
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}")
            apply_gradients(model, grads, velocity, hyper.lr, hyper.momentum)
            for bp, stats in zip(model.bns, cache.bn_stats):
                bp.running_mean[...] = stats.running_mean
                bp.running_var[...] = stats.running_var
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y))
            seen += len(idx)
        history.loss.append(total_loss / seen)
        history.accuracy.append(correct / seen)
        log.info("epoch %d loss %.4f acc %.3f", epoch + 1, history.loss[-1], history.accuracy[-1])
        if on_epoch is not None and on_epoch(epoch + 1, history):
            break
    return model, history


# ---------------------------------------------------------------- evaluate


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total = tp + fp + fn + tn
        accuracy = (tp + tn) / total if total else 0.0
        return cls(tp, fp, fn, tn, precision, recall, f1, accuracy)

    @classmethod
    def from_predictions(cls, truth, predicted):
        truth = np.asarray(truth, dtype=bool)
        predicted = np.asarray(predicted, dtype=bool)
        return cls.from_counts(
            int(np.sum(truth & predicted)),
            int(np.sum(~truth & predicted)),
            int(np.sum(truth & ~predicted)),
            int(np.sum(~truth & ~predicted)),
        )

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class Verdict:
    is_bug: bool
    bug_probability: float

    @classmethod
    def from_probability(cls, p):
        p = float(p)
        return cls(is_bug=p >= 0.5, bug_probability=p)


def predict_batch(model: Model, batch: np.ndarray):
    logits, _ = forward_pass(model, batch, "infer")
    return nc.softmax(logits.astype(np.float64), axis=1)[:, BUG]


def evaluate(model: Model, manifest: DatasetManifest, batch_size: int = 16, images: Optional[ImageSource] = None):
    """Bug is the positive class."""
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    images = images or ImageSource(manifest, model.config, model.dtype)
    probs = []
    for start in range(0, len(manifest), batch_size):
        probs.extend(predict_batch(model, images.batch(range(start, min(len(manifest), start + batch_size)))))
    truth = np.array(manifest.labels()) == BUG
    predicted = np.array([Verdict.from_probability(p).is_bug for p in probs])
    return Metrics.from_predictions(truth, predicted)


def predict(model: Model, img: np.ndarray) -> Verdict:
    x = preprocess_image(img, model.config.height, model.config.width, model.dtype)
    return Verdict.from_probability(predict_batch(model, x)[0])
