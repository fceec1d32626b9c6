"""Minimal end-to-end network with covariance pooling and SGD training.

Feature extractor (small conv stack) -> 1x1 channel reduction -> pooling
(covariance variant or first-order) -> linear classifier -> softmax
cross-entropy. Everything runs in float64 on CPU and is deterministic given
the master seed: all stochastic draws (weights, data, batch order) come from
per-purpose PCG64 substreams spawned from numpy SeedSequence keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pooling import (
    NormalizationSpec,
    Variant,
    first_order_pool,
    pool_forward,
    vectorize_upper,
)
from .gradients import pool_backward

FIRST_ORDER_KINDS = ("average", "max")


class NonFiniteGradientError(RuntimeError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite gradient in layer {layer!r}")
        self.layer = layer


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int = 3
    stride: int = 1
    relu: bool = True


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, int, int] = (1, 18, 18)  # channels, height, width
    conv_layers: tuple[ConvSpec, ...] = (
        ConvSpec(8, kernel=3, stride=3, relu=False),
        ConvSpec(16, kernel=1, relu=False),
    )
    reduce_channels: int = 16
    pooling: NormalizationSpec | str = field(default_factory=NormalizationSpec)
    classes: int = 10
    seed: int = 0
    init_std: float = 0.1

    def __post_init__(self):
        if self.reduce_channels < 1:
            raise ValueError("reduce_channels must be >= 1")
        if not self.conv_layers:
            raise ValueError("at least one conv layer is required")
        if isinstance(self.pooling, str) and self.pooling not in FIRST_ORDER_KINDS:
            raise ValueError(f"unknown first-order pooling {self.pooling!r}")

    @property
    def is_second_order(self) -> bool:
        return isinstance(self.pooling, NormalizationSpec)

    def to_dict(self) -> dict:
        pooling = (
            {
                "variant": self.pooling.variant.value,
                "alpha": self.pooling.alpha,
                "eps_log": self.pooling.eps_log,
                "beta": self.pooling.beta,
                "eps_elem": self.pooling.eps_elem,
            }
            if self.is_second_order
            else self.pooling
        )
        return {
            "input_shape": list(self.input_shape),
            "conv_layers": [
                {"filters": c.filters, "kernel": c.kernel, "stride": c.stride, "relu": c.relu}
                for c in self.conv_layers
            ],
            "reduce_channels": self.reduce_channels,
            "pooling": pooling,
            "classes": self.classes,
            "seed": self.seed,
            "init_std": self.init_std,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        pooling = d.get("pooling", "average")
        if isinstance(pooling, dict):
            pooling = NormalizationSpec(
                variant=Variant(pooling.get("variant", "mpn")),
                alpha=pooling.get("alpha", 0.5),
                eps_log=pooling.get("eps_log", 1e-3),
                beta=pooling.get("beta", 0.5),
                eps_elem=pooling.get("eps_elem", 1e-5),
            )
        default_convs = (
            {"filters": 8, "stride": 3, "relu": False},
            {"filters": 16, "kernel": 1, "relu": False},
        )
        return NetworkConfig(
            input_shape=tuple(d.get("input_shape", (1, 18, 18))),
            conv_layers=tuple(
                ConvSpec(
                    filters=c["filters"],
                    kernel=c.get("kernel", 3),
                    stride=c.get("stride", 1),
                    relu=c.get("relu", True),
                )
                for c in d.get("conv_layers", default_convs)
            ),
            reduce_channels=d.get("reduce_channels", 16),
            pooling=pooling,
            classes=d.get("classes", 10),
            seed=d.get("seed", 0),
            init_std=d.get("init_std", 0.1),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch: int = 32
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_start: float = 10 ** (-1.2)
    lr_end: float = 1e-5
    init: str = "random"  # or "warm"
    warm_source: str | None = None

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.init not in ("random", "warm"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch": self.batch,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "init": self.init,
            "warm_source": self.warm_source,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**{k: d[k] for k in d if k in TrainConfig.__dataclass_fields__})

    def base_lr(self, epoch: int) -> float:
        """Exponential decay from lr_start to lr_end across the epoch range."""
        if self.epochs <= 1:
            return self.lr_start
        frac = epoch / (self.epochs - 1)
        return float(self.lr_start * (self.lr_end / self.lr_start) ** frac)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    d_gen: int = 9
    n_pos: int = 36
    cond_range: tuple[float, float] = (4.0, 40.0)
    train_per_class: int = 200
    test_per_class: int = 50
    seed: int = 0
    sigma_scale: float = 10.0  # top-eigenvalue scale of the class covariances

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.cond_range[0] < 1 or self.cond_range[1] < self.cond_range[0]:
            raise ValueError(f"bad condition-number range {self.cond_range}")
        tile = int(round(np.sqrt(self.d_gen)))
        grid = int(round(np.sqrt(self.n_pos)))
        if tile * tile != self.d_gen or grid * grid != self.n_pos:
            raise ValueError("d_gen and n_pos must both be perfect squares")

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "d_gen": self.d_gen,
            "n_pos": self.n_pos,
            "cond_range": list(self.cond_range),
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class,
            "seed": self.seed,
            "sigma_scale": self.sigma_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "cond_range" in d:
            d["cond_range"] = tuple(d["cond_range"])
        return SyntheticSpec(**{k: d[k] for k in d if k in SyntheticSpec.__dataclass_fields__})


# ---------------------------------------------------------------------------
# Synthetic covariance-discrimination dataset


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


def class_covariances(spec: SyntheticSpec) -> list[np.ndarray]:
    """One random SPD matrix per class: log-spaced spectrum with a condition
    number drawn from cond_range, in a random orthogonal basis."""
    sigmas = []
    for k in range(spec.classes):
        rng = _rng(spec.seed, 1, k)
        cond = rng.uniform(*spec.cond_range)
        lam = spec.sigma_scale * np.logspace(0.0, -np.log10(cond), spec.d_gen)
        q, _ = np.linalg.qr(rng.standard_normal((spec.d_gen, spec.d_gen)))
        sigmas.append((q * lam) @ q.T)
    return sigmas


def _sample_images(spec: SyntheticSpec, sigmas, per_class: int, stream: int):
    tile = int(round(np.sqrt(spec.d_gen)))
    grid = int(round(np.sqrt(spec.n_pos)))
    side = tile * grid
    images = np.empty((spec.classes * per_class, 1, side, side))
    labels = np.empty(spec.classes * per_class, dtype=np.int64)
    for k, sigma in enumerate(sigmas):
        rng = _rng(spec.seed, stream, k)
        chol = np.linalg.cholesky(sigma + 1e-12 * np.eye(spec.d_gen))
        for i in range(per_class):
            # Each i.i.d. column ~ N(0, Sigma_k) becomes one contiguous
            # tile x tile block, so a stride-`tile` convolution sees exactly
            # one sample vector per spatial position.
            cols = chol @ rng.standard_normal((spec.d_gen, spec.n_pos))
            idx = k * per_class + i
            images[idx, 0] = (
                cols.T.reshape(grid, grid, tile, tile)
                .transpose(0, 2, 1, 3)
                .reshape(side, side)
            )
            labels[idx] = k
    return images, labels


def generate_synthetic(spec: SyntheticSpec):
    """(train, test) datasets of zero-mean class-covariance images.

    Class means are exactly zero by construction, so first-order statistics
    carry no class signal; all the information lives in the per-class
    covariance structure.
    """
    sigmas = class_covariances(spec)
    train = _sample_images(spec, sigmas, spec.train_per_class, stream=2)
    test = _sample_images(spec, sigmas, spec.test_per_class, stream=3)
    return train, test


# ---------------------------------------------------------------------------
# Layers


class Conv2D:
    """Valid-padding convolution via im2col, with optional ReLU."""

    def __init__(self, name, in_c, out_c, kernel, stride=1, relu=True, rng=None, init_std=0.01):
        self.name = name
        self.kernel = kernel
        self.stride = stride
        self.relu = relu
        self.in_c = in_c
        self.out_c = out_c
        rng = rng or np.random.default_rng(0)
        self.w = rng.normal(0.0, init_std, size=(out_c, in_c, kernel, kernel))
        self.b = np.zeros(out_c)
        self.lr_factor = 1.0
        self.lr_schedule: np.ndarray | None = None  # per-epoch override
        self._cache = None

    def params(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def set_params(self, params):
        self.w = params[f"{self.name}.w"].reshape(self.w.shape).copy()
        self.b = params[f"{self.name}.b"].reshape(self.b.shape).copy()

    def out_hw(self, h, w):
        return (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1

    def forward(self, x):
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        oh, ow = self.out_hw(h, w)
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]  # (b, c, oh, ow, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * k * k)
        wmat = self.w.reshape(self.out_c, c * k * k)
        out = cols @ wmat.T + self.b  # (b, oh*ow, out_c)
        out = out.transpose(0, 2, 1).reshape(b, self.out_c, oh, ow)
        pre = out
        if self.relu:
            out = np.maximum(out, 0.0)
        self._cache = (x.shape, cols, pre)
        return out

    def backward(self, grad):
        (xshape, cols, pre) = self._cache
        b, c, h, w = xshape
        k, s = self.kernel, self.stride
        oh, ow = self.out_hw(h, w)
        if self.relu:
            grad = grad * (pre > 0)
        gmat = grad.reshape(b, self.out_c, oh * ow).transpose(0, 2, 1)  # (b, oh*ow, out_c)
        self.gw = np.einsum("bpo,bpk->ok", gmat, cols).reshape(self.w.shape)
        self.gb = gmat.sum(axis=(0, 1))
        gcols = gmat @ self.w.reshape(self.out_c, c * k * k)  # (b, oh*ow, c*k*k)
        gx = np.zeros(xshape)
        gcols = gcols.reshape(b, oh, ow, c, k, k)
        for di in range(k):
            for dj in range(k):
                gx[:, :, di : di + oh * s : s, dj : dj + ow * s : s] += gcols[
                    :, :, :, :, di, dj
                ].transpose(0, 3, 1, 2)
        return gx

    def grads(self):
        return {f"{self.name}.w": self.gw, f"{self.name}.b": self.gb}


class PoolingLayer:
    """Covariance pooling (any spectral or element-wise variant) or
    first-order mean/max pooling over spatial positions."""

    def __init__(self, pooling: NormalizationSpec | str):
        self.pooling = pooling
        self.name = "pool"
        self._cache = None

    @property
    def second_order(self):
        return isinstance(self.pooling, NormalizationSpec)

    def output_dim(self, channels: int) -> int:
        return channels * (channels + 1) // 2 if self.second_order else channels

    def forward(self, x):
        b, c, h, w = x.shape
        feats = x.reshape(b, c, h * w)
        if self.second_order:
            tapes = []
            out = np.empty((b, c * (c + 1) // 2))
            for i in range(b):
                q, tape = pool_forward(feats[i], self.pooling)
                out[i] = vectorize_upper(q)
                tapes.append(tape)
            self._cache = (x.shape, tapes)
            return out
        if self.pooling == "average":
            self._cache = (x.shape, None)
            return feats.mean(axis=2)
        self._cache = (x.shape, feats.argmax(axis=2))
        return feats.max(axis=2)

    def backward(self, grad):
        xshape, aux = self._cache
        b, c, h, w = xshape
        if self.second_order:
            gx = np.empty((b, c, h * w))
            for i in range(b):
                gx[i] = pool_backward(aux[i], grad[i])
            return gx.reshape(xshape)
        if self.pooling == "average":
            gx = np.repeat(grad[:, :, None] / (h * w), h * w, axis=2)
            return gx.reshape(xshape)
        gx = np.zeros((b, c, h * w))
        bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
        gx[bi, ci, aux] = grad
        return gx.reshape(xshape)

    def params(self):
        return {}

    def grads(self):
        return {}


class Linear:
    def __init__(self, name, in_dim, out_dim, rng=None, init_std=0.01):
        self.name = name
        rng = rng or np.random.default_rng(0)
        self.w = rng.normal(0.0, init_std, size=(out_dim, in_dim))
        self.b = np.zeros(out_dim)
        self.lr_factor = 1.0
        self.lr_schedule = None
        self._cache = None

    def params(self):
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def set_params(self, params):
        self.w = params[f"{self.name}.w"].reshape(self.w.shape).copy()
        self.b = params[f"{self.name}.b"].reshape(self.b.shape).copy()

    def forward(self, x):
        self._cache = x
        return x @ self.w.T + self.b

    def backward(self, grad):
        x = self._cache
        self.gw = grad.T @ x
        self.gb = grad.sum(axis=0)
        return grad @ self.w

    def grads(self):
        return {f"{self.name}.w": self.gw, f"{self.name}.b": self.gb}


# ---------------------------------------------------------------------------
# Network


class Network:
    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        c, h, w = cfg.input_shape
        self.layers = []
        rng_seq = np.random.SeedSequence((cfg.seed, 10))
        streams = [np.random.default_rng(s) for s in rng_seq.spawn(len(cfg.conv_layers) + 2)]
        for i, spec in enumerate(cfg.conv_layers):
            layer = Conv2D(
                f"conv{i}", c, spec.filters, spec.kernel, spec.stride, spec.relu,
                rng=streams[i], init_std=cfg.init_std,
            )
            self.layers.append(layer)
            c = spec.filters
            h, w = layer.out_hw(h, w)
        reduce = Conv2D(
            "reduce", c, cfg.reduce_channels, kernel=1, stride=1, relu=False,
            rng=streams[-2], init_std=cfg.init_std,
        )
        self.layers.append(reduce)
        self.pool = PoolingLayer(cfg.pooling)
        self.layers.append(self.pool)
        feat_dim = self.pool.output_dim(cfg.reduce_channels)
        self.fc = Linear("fc", feat_dim, cfg.classes, rng=streams[-1], init_std=cfg.init_std)
        self.layers.append(self.fc)
        self.feature_hw = (h, w)

    def pre_pool_layers(self):
        return [l for l in self.layers[: self.layers.index(self.pool)]]

    def post_pool_layers(self):
        return [self.fc]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def set_params(self, params):
        for layer in self.layers:
            if hasattr(layer, "set_params") and layer.params():
                layer.set_params(params)

    def logits(self, x):
        out = x
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward_from_logits(self, dlogits):
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def grads(self):
        out = {}
        for layer in self.layers:
            out.update(layer.grads())
        return out


def softmax_cross_entropy(logits, labels):
    """(mean loss, dloss/dlogits) with the 1/batch factor folded in."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def forward(net: Network, batch_x, batch_y):
    logits = net.logits(batch_x)
    loss, dlogits = softmax_cross_entropy(logits, batch_y)
    return logits, loss, dlogits


class SGDState:
    """Momentum buffers keyed by parameter name."""

    def __init__(self):
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, net: Network, cfg: TrainConfig, epoch: int):
        base = cfg.base_lr(epoch)
        for layer in net.layers:
            grads = layer.grads()
            if not grads:
                continue
            if getattr(layer, "lr_schedule", None) is not None:
                lr = float(layer.lr_schedule[min(epoch, len(layer.lr_schedule) - 1)])
            else:
                lr = base * getattr(layer, "lr_factor", 1.0)
            params = layer.params()
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradientError(name)
                w = params[name]
                v = self.velocity.get(name)
                if v is None:
                    v = np.zeros_like(w)
                v = cfg.momentum * v - lr * (g + cfg.weight_decay * w)
                self.velocity[name] = v
                w += v


def backward_step(net: Network, dlogits, train_cfg: TrainConfig, state: SGDState, epoch: int):
    net.backward_from_logits(dlogits)
    state.step(net, train_cfg, epoch)
    return net


def warm_init(net: Network, source: dict, epochs: int):
    """Copy pre-pooling layers from a first-order checkpoint; those layers get
    the per-epoch logspace(-2, -5) schedule while post-pooling layers keep a
    doubled version of the base schedule."""
    params = source["params"]
    for layer in net.pre_pool_layers():
        for name, value in layer.params().items():
            if name not in params:
                raise ValueError(f"warm source is missing parameter {name!r}")
            if tuple(params[name].shape) != tuple(value.shape):
                raise ValueError(
                    f"warm source shape mismatch for {name!r}: "
                    f"{params[name].shape} vs {value.shape}"
                )
        layer.set_params(params)
        layer.lr_schedule = np.logspace(-2, -5, epochs)
    for layer in net.post_pool_layers():
        layer.lr_factor = 2.0
    return net


def evaluate_logits(net: Network, images, labels, batch=64):
    n = images.shape[0]
    preds = np.empty(n, dtype=np.int64)
    total_loss = 0.0
    for i in range(0, n, batch):
        xb = images[i : i + batch]
        yb = labels[i : i + batch]
        logits = net.logits(xb)
        loss, _ = softmax_cross_entropy(logits, yb)
        total_loss += loss * xb.shape[0]
        preds[i : i + batch] = np.argmax(logits, axis=1)
    return total_loss / n, preds


def evaluate(net: Network, images, labels):
    """(top-1 error, per-class error). Argmax ties break to the lowest index."""
    _, preds = evaluate_logits(net, images, labels)
    errors = preds != labels
    per_class = np.array(
        [float(np.mean(errors[labels == k])) if np.any(labels == k) else 0.0
         for k in range(net.cfg.classes)]
    )
    return float(np.mean(errors)), per_class


def train(net_cfg: NetworkConfig, train_cfg: TrainConfig, data, warm_source: dict | None = None):
    """Epoch loop with exponential LR decay and seeded batch order.

    Returns (checkpoint dict, history rows); history rows are
    (epoch, train_loss, train_err, test_loss, test_err, lr).
    """
    (train_x, train_y), (test_x, test_y) = data
    net = Network(net_cfg)
    if train_cfg.init == "warm":
        if warm_source is None:
            raise ValueError("warm init requested but no warm source given")
        warm_init(net, warm_source, train_cfg.epochs)
    state = SGDState()
    history = []
    n = train_x.shape[0]
    for epoch in range(train_cfg.epochs):
        order = _rng(net_cfg.seed, 20, epoch).permutation(n)
        epoch_loss = 0.0
        for i in range(0, n, train_cfg.batch):
            idx = order[i : i + train_cfg.batch]
            _, loss, dlogits = forward(net, train_x[idx], train_y[idx])
            if not np.isfinite(loss):
                raise NonFiniteGradientError(f"loss at epoch {epoch}")
            backward_step(net, dlogits, train_cfg, state, epoch)
            epoch_loss += loss * idx.size
        train_err, _ = evaluate(net, train_x, train_y)
        test_loss, test_preds = evaluate_logits(net, test_x, test_y)
        test_err = float(np.mean(test_preds != test_y))
        history.append(
            (epoch, epoch_loss / n, train_err, test_loss, test_err, train_cfg.base_lr(epoch))
        )
    checkpoint = {
        "net_cfg": net_cfg.to_dict(),
        "epoch": train_cfg.epochs,
        "params": net.params(),
        "rng_state": {"generator": "pcg64", "master_seed": net_cfg.seed},
    }
    return checkpoint, history


def network_from_checkpoint(doc: dict) -> Network:
    net = Network(NetworkConfig.from_dict(doc["net_cfg"]))
    net.set_params(doc["params"])
    return net


def history_csv(history) -> str:
    lines = ["epoch,train_loss,train_err,test_loss,test_err,lr"]
    for epoch, tl, te, vl, ve, lr in history:
        lines.append(f"{epoch},{tl!r},{te!r},{vl!r},{ve!r},{lr!r}")
    return "\n".join(lines) + "\n"
