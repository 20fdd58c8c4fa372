"""Neural building blocks, models, and optimizers.

Layers compose tensor primitives, so backward passes come from the
differentiation graph rather than per-layer gradient code. Parameters are
registered by attribute assignment and addressed by dotted names, which is
also the naming scheme used in checkpoint files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tk
from .rand import stream
from .tensor import Tensor


class TrainingAborted(RuntimeError):
    """A non-finite gradient or loss stopped an optimization step."""


class Module:
    """Parameter container with train/eval modes and dotted-name traversal."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + n: p for n, p in self._params.items()}
        for n, child in self._children.items():
            out.update(child.named_parameters(prefix + n + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + n: b for n, b in self._buffers.items()}
        for n, child in self._children.items():
            out.update(child.named_buffers(prefix + n + "."))
        return out

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]):
        own_p = self.named_parameters()
        own_b = self.named_buffers()
        for name, arr in params.items():
            if name not in own_p:
                raise KeyError(f"unknown parameter {name!r}")
            tgt = own_p[name]
            if tuple(arr.shape) != tgt.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != expected {tgt.shape}")
            tgt.data = np.array(arr, dtype=tgt.dtype)
        for name, arr in buffers.items():
            if name not in own_b:
                raise KeyError(f"unknown buffer {name!r}")
            if tuple(arr.shape) != own_b[name].shape:
                raise ValueError(f"buffer {name!r}: shape mismatch {arr.shape}")
            self._assign_buffer(name, arr)
        return self

    def _assign_buffer(self, dotted: str, arr: np.ndarray):
        mod = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            mod = mod._children[part]
        mod._buffers[parts[-1]] = np.array(arr, dtype=mod._buffers[parts[-1]].dtype)
        object.__setattr__(mod, parts[-1], mod._buffers[parts[-1]])

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel * kernel
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding
        if bias:
            self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        out = tk.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            out = tk.add(out, tk.reshape(self.bias, (1, -1, 1, 1)))
        return out


class Linear(Module):
    def __init__(self, f_in, f_out, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / math.sqrt(f_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(f_in, f_out)).astype(dtype), requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(f_out, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        out = tk.matmul(x, self.weight)
        if self.bias is not None:
            out = tk.add(out, tk.reshape(self.bias, (1, -1)))
        return out


class BatchNorm(Module):
    """Per-channel batch statistics over 2-d (b,f) or 4-d (b,c,h,w) inputs.

    Training mode normalizes with the current batch's statistics and updates
    running buffers; eval mode uses the frozen running statistics, so two
    eval passes over the same input are bitwise identical.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.eps = eps
        self.momentum = momentum
        self._buffers["running_mean"] = np.zeros(num_features, dtype=dtype)
        self._buffers["running_var"] = np.ones(num_features, dtype=dtype)
        object.__setattr__(self, "running_mean", self._buffers["running_mean"])
        object.__setattr__(self, "running_var", self._buffers["running_var"])

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 4:
            axes, shape = (0, 2, 3), (1, -1, 1, 1)
        elif x.ndim == 2:
            axes, shape = (0,), (1, -1)
        else:
            raise tk.ShapeError(f"BatchNorm: expected 2-d or 4-d input, got {x.shape}")
        if self.training:
            out, mu, var = tk.batch_norm(x, self.gamma, self.beta, axes, self.eps)
            m = self.momentum
            self._buffers["running_mean"][:] = (
                (1 - m) * self._buffers["running_mean"] + m * mu.reshape(-1)
            )
            self._buffers["running_var"][:] = (
                (1 - m) * self._buffers["running_var"] + m * var.reshape(-1)
            )
            return out
        mu = Tensor(self._buffers["running_mean"].reshape(shape), dtype=x.dtype)
        var = Tensor(self._buffers["running_var"].reshape(shape), dtype=x.dtype)
        eps = Tensor(np.full(1, self.eps), dtype=x.dtype)
        xhat = tk.div(tk.sub(x, mu), tk.sqrt(tk.add(var, tk.reshape(eps, (1,) * var.ndim))))
        return tk.add(tk.mul(xhat, tk.reshape(self.gamma, shape)), tk.reshape(self.beta, shape))


@dataclass
class EncoderConfig:
    widths: tuple = (16, 32, 64)
    kernel: int = 3
    downsample: int = 2
    in_channels: int = 3

    @property
    def total_downsample(self) -> int:
        return self.downsample ** len(self.widths)


class Encoder(Module):
    """Convolutional feature extractor applied identically to every stream.

    One parameter store, any number of applications: passing two images
    through the same instance is what makes the architecture Siamese.
    """

    def __init__(self, cfg: EncoderConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        c_prev = cfg.in_channels
        pad = (cfg.kernel - 1) // 2
        for i, width in enumerate(cfg.widths):
            # batch normalization cancels additive shifts, so a conv bias here
            # would be a dead parameter with an identically zero gradient
            conv = Conv2d(c_prev, width, cfg.kernel, padding=pad, bias=False, rng=rng, dtype=dtype)
            bn = BatchNorm(width, dtype=dtype)
            setattr(self, f"conv{i}", conv)
            setattr(self, f"bn{i}", bn)
            c_prev = width

    @property
    def out_channels(self) -> int:
        return self.cfg.widths[-1]

    def forward(self, x: Tensor) -> Tensor:
        total = self.cfg.total_downsample
        _, _, h, w = x.shape
        if h % total or w % total:
            raise tk.ShapeError(
                f"encoder needs spatial dims divisible by {total}, got {h}x{w}"
            )
        out = x
        for i in range(len(self.cfg.widths)):
            out = getattr(self, f"conv{i}")(out)
            out = getattr(self, f"bn{i}")(out)
            out = tk.relu(out)
            out = tk.avg_pool2d(out, self.cfg.downsample)
        return out


@dataclass
class ProjectorConfig:
    in_features: int = 64
    hidden: int = 512
    out_features: int = 256


class Projector(Module):
    """Two linear layers; batch norm and rectifier after the first only."""

    def __init__(self, cfg: ProjectorConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.fc1 = Linear(cfg.in_features, cfg.hidden, rng=rng, dtype=dtype)
        self.bn = BatchNorm(cfg.hidden, dtype=dtype)
        self.fc2 = Linear(cfg.hidden, cfg.out_features, rng=rng, dtype=dtype)

    def forward(self, pooled: Tensor) -> Tensor:
        if pooled.ndim != 2 or pooled.shape[1] != self.cfg.in_features:
            raise tk.ShapeError(
                f"projector expects (b, {self.cfg.in_features}) input, got {pooled.shape}"
            )
        return self.fc2(tk.relu(self.bn(self.fc1(pooled))))


def global_avg_pool(fmap: Tensor) -> Tensor:
    """(b,c,h,w) -> (b,c) by averaging the spatial dimensions."""
    return tk.reduce_mean(fmap, axes=(2, 3))


@dataclass
class ChangeHeadConfig:
    in_channels: int = 64
    mode: str = "diff"  # "diff": |f0 - f1|; "concat": channel concatenation


class ChangeHead(Module):
    """Per-pixel change logits from a pair of feature maps.

    Combines the two maps (absolute difference by default), upsamples
    bilinearly back to image resolution, and applies a 1x1 convolution to a
    single logit channel.
    """

    def __init__(self, cfg: ChangeHeadConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        if cfg.mode not in ("diff", "concat"):
            raise ValueError(f"unknown change head mode {cfg.mode!r}")
        self.cfg = cfg
        c_in = cfg.in_channels if cfg.mode == "diff" else 2 * cfg.in_channels
        self.classifier = Conv2d(c_in, 1, 1, rng=rng, dtype=dtype)

    def forward(self, f0: Tensor, f1: Tensor, out_hw: tuple) -> Tensor:
        if f0.shape != f1.shape:
            raise tk.ShapeError(f"feature maps differ in shape: {f0.shape} vs {f1.shape}")
        if self.cfg.mode == "diff":
            merged = tk.abs_(tk.sub(f0, f1))
        else:
            merged = tk.concat([f0, f1], axis=1)
        up = tk.bilinear_upsample(merged, out_hw[0], out_hw[1])
        return self.classifier(up)


class PretrainModel(Module):
    def __init__(self, encoder: Encoder, projector: Projector):
        super().__init__()
        self.encoder = encoder
        self.projector = projector

    def embed(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Return (feature map, projected embedding) for one stream."""
        fmap = self.encoder(image)
        z = self.projector(global_avg_pool(fmap))
        return fmap, z


class ChangeModel(Module):
    def __init__(self, encoder: Encoder, head: ChangeHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, t0: Tensor, t1: Tensor) -> Tensor:
        out_hw = (t0.shape[2], t0.shape[3])
        return self.head(self.encoder(t0), self.encoder(t1), out_hw)


def init_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic parameter-init stream, independent of construction order elsewhere."""
    return stream(seed, "init", name)


# -- learning-rate schedule --------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr0: float, floor_ratio: float = 1e-3) -> float:
    """Cosine decay from lr0 down to lr0 * floor_ratio over total_steps."""
    if step < 0:
        raise ValueError(f"negative step {step}")
    lr_end = lr0 * floor_ratio
    if step >= total_steps:
        return lr_end
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


# -- optimizers --------------------------------------------------------------


def _check_finite_grads(grads: dict[str, np.ndarray]):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAborted(f"non-finite gradient in {name!r}")


class Lars:
    """Layer-wise adaptive rate scaling with momentum.

    For a parameter w with gradient g the local rate is
    ``trust_coeff * |w| / (|g| + weight_decay * |w| + eps)`` (whole-tensor
    2-norms), applied to the decayed direction ``g + weight_decay * w`` via a
    momentum buffer. Parameters with |w| = 0 use local rate 1. Tensors of
    rank <= 1 (biases, normalization scales) are excluded from both weight
    decay and trust scaling.
    """

    def __init__(self, params: dict[str, Tensor], weight_decay=1e-6, momentum=0.9,
                 trust_coeff=1e-3, eps=1e-9):
        self.params = dict(sorted(params.items()))
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.trust_coeff = trust_coeff
        self.eps = eps
        self.momenta = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def _excluded(self, p: Tensor) -> bool:
        return p.data.ndim <= 1

    def step(self, lr: float):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        _check_finite_grads(grads)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if self._excluded(p):
                update = g
                local_lr = 1.0
            else:
                w_norm = float(np.linalg.norm(p.data))
                g_norm = float(np.linalg.norm(g))
                update = g + self.weight_decay * p.data
                if w_norm == 0.0:
                    local_lr = 1.0
                else:
                    local_lr = self.trust_coeff * w_norm / (
                        g_norm + self.weight_decay * w_norm + self.eps
                    )
            buf = self.momenta[name]
            buf *= self.momentum
            buf += local_lr * update
            p.data = p.data - (lr * buf).astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"momentum.{n}": b for n, b in self.momenta.items()}


class Adam:
    """Bias-corrected adaptive moment estimation."""

    def __init__(self, params: dict[str, Tensor], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in self.params.items()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        _check_finite_grads(grads)
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g.astype(np.float64) ** 2)
            update = (lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(p.dtype)
            p.data = p.data - update

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam_m.{n}": b for n, b in self.m.items()}
        out.update({f"adam_v.{n}": b for n, b in self.v.items()})
        out["adam_t"] = np.array([self.t], dtype=np.float64)
        return out


def binary_cross_entropy_with_logits(logits: Tensor, target: Tensor, pos_weight: float = 1.0) -> Tensor:
    """Mean per-pixel BCE on logits, stable for large |logits|.

    loss = pos_weight * y * softplus(-x) + (1 - y) * softplus(x), with
    softplus(t) = max(t, 0) + log(1 + exp(-|t|)).
    """
    if logits.shape != target.shape:
        raise tk.ShapeError(f"logits {logits.shape} vs target {target.shape}")

    def softplus(t: Tensor) -> Tensor:
        one = Tensor(np.ones(1, dtype=t.dtype))
        return tk.add(tk.clamp(t, lo=0.0), tk.log(tk.add(one, tk.exp(tk.mul(tk.abs_(t), -1.0)))))

    y = target
    one = Tensor(np.ones(1, dtype=logits.dtype))
    pos = tk.mul(tk.mul(y, softplus(tk.mul(logits, -1.0))), float(pos_weight))
    neg = tk.mul(tk.sub(one, y), softplus(logits))
    return tk.reduce_mean(tk.add(pos, neg))
