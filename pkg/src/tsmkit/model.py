"""Segment-based TSM classifier: residual CNN over sampled frames with
average consensus over segments.

The network runs every sampled frame through a shared 2D CNN whose residual
blocks optionally apply the temporal shift to their branch input. Per-frame
logits are averaged over the clip's segments before softmax.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .shift import ShiftConfig, temporal_shift, temporal_shift_backward

# capacity -> (stem width, [(width, blocks, conv groups) per stage])
# "micro" exists for gradient-check scale only.
CAPACITY_PRESETS = {
    "micro": (4, [(4, 2, 1)]),
    "small": (16, [(16, 2, 1), (32, 2, 1), (64, 2, 1)]),
    "large": (32, [(32, 3, 4), (64, 3, 4), (128, 3, 4)]),
}


@dataclass
class ModelConfig:
    num_classes: int
    in_channels: int = 1
    num_segments: int = 8
    capacity: str = "small"
    dropout_rate: float = 0.5
    shift_enabled: bool = True
    fold_div: int = 8

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_segments < 1:
            raise ValueError(f"num_segments must be >= 1, got {self.num_segments}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.capacity not in CAPACITY_PRESETS:
            raise ValueError(f"unknown capacity {self.capacity!r}")

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "num_segments": self.num_segments,
            "capacity": self.capacity,
            "dropout_rate": self.dropout_rate,
            "shift_enabled": self.shift_enabled,
            "fold_div": self.fold_div,
        }


@dataclass
class VideoBatch:
    frames: np.ndarray  # [N*T, C, H, W]
    labels: np.ndarray  # [N]
    ids: list


def _he_init(rng, shape, fan_in, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class Conv2d:
    def __init__(self, rng, in_ch, out_ch, k, stride=1, padding=0, groups=1,
                 dtype=np.float32):
        fan_in = (in_ch // groups) * k * k
        self.weight = _he_init(rng, (out_ch, in_ch // groups, k, k), fan_in, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.stride, self.padding, self.groups = stride, padding, groups
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x):
        self._x = x
        out, self._cols = ops.conv2d(x, self.weight, self.bias, self.stride,
                                     self.padding, self.groups,
                                     return_cols=True)
        return out

    def backward(self, g):
        gx, gw, gb = ops.conv2d_backward(self._x, self.weight, g, self.stride,
                                         self.padding, self.groups,
                                         cols_cache=self._cols)
        self.gweight += gw
        self.gbias += gb
        return gx

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.gweight, "bias": self.gbias}


class AffineNorm:
    def __init__(self, channels, dtype=np.float32, zero_scale=False):
        init = 0.0 if zero_scale else 1.0
        self.scale = np.full(channels, init, dtype=dtype)
        self.shift = np.zeros(channels, dtype=dtype)
        self.gscale = np.zeros_like(self.scale)
        self.gshift = np.zeros_like(self.shift)

    def forward(self, x):
        out, self._cache = ops.affine_norm(x, self.scale, self.shift)
        return out

    def backward(self, g):
        gx, gs, gb = ops.affine_norm_backward(self._cache, g)
        self.gscale += gs
        self.gshift += gb
        return gx

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def grads(self):
        return {"scale": self.gscale, "shift": self.gshift}


class Linear:
    # gain < 1 keeps a freshly built classifier close to uniform output
    def __init__(self, rng, in_dim, out_dim, dtype=np.float32, gain=1.0):
        self.weight = gain * _he_init(rng, (out_dim, in_dim), in_dim, dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x):
        self._x = x
        return ops.linear(x, self.weight, self.bias)

    def backward(self, g):
        gx, gw, gb = ops.linear_backward(self._x, self.weight, g)
        self.gweight += gw
        self.gbias += gb
        return gx

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.gweight, "bias": self.gbias}


class ResidualBlock:
    """y = identity(x) + F(shift(x)), F = conv3x3 -> norm -> relu -> conv3x3 -> norm.

    The identity path is never shifted. Width or stride changes use a 1x1
    projection convolution on the identity. The branch's final norm scale is
    zero-initialized so a freshly built block is the identity map.
    """

    def __init__(self, rng, in_ch, out_ch, stride, groups, shift_cfg,
                 dtype=np.float32):
        self.shift_cfg = shift_cfg  # None disables the shift
        self.conv1 = Conv2d(rng, in_ch, out_ch, 3, stride, 1, groups, dtype)
        self.norm1 = AffineNorm(out_ch, dtype)
        self.conv2 = Conv2d(rng, out_ch, out_ch, 3, 1, 1, groups, dtype)
        self.norm2 = AffineNorm(out_ch, dtype, zero_scale=True)
        self.proj = None
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(rng, in_ch, out_ch, 1, stride, 0, 1, dtype)

    def forward(self, x):
        branch = temporal_shift(x, self.shift_cfg) if self.shift_cfg else x
        branch = self.conv1.forward(branch)
        branch = self.norm1.forward(branch)
        self._pre_relu = branch
        branch = ops.relu(branch)
        branch = self.conv2.forward(branch)
        branch = self.norm2.forward(branch)
        identity = self.proj.forward(x) if self.proj else x
        return identity + branch

    def backward(self, g):
        gb = self.norm2.backward(g)
        gb = self.conv2.backward(gb)
        gb = ops.relu_backward(self._pre_relu, gb)
        gb = self.norm1.backward(gb)
        gb = self.conv1.backward(gb)
        if self.shift_cfg:
            gb = temporal_shift_backward(gb, self.shift_cfg)
        gid = self.proj.backward(g) if self.proj else g
        return gid + gb

    def sublayers(self):
        layers = {"conv1": self.conv1, "norm1": self.norm1,
                  "conv2": self.conv2, "norm2": self.norm2}
        if self.proj:
            layers["proj"] = self.proj
        return layers


class Model:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        stem_w, stages = CAPACITY_PRESETS[cfg.capacity]
        shift_cfg = None
        if cfg.shift_enabled:
            shift_cfg = ShiftConfig(cfg.num_segments, cfg.fold_div)

        # stride-2 stem halves the resolution before the residual stages
        self.stem_conv = Conv2d(rng, cfg.in_channels, stem_w, 3, 2, 1, 1, dtype)
        self.stem_norm = AffineNorm(stem_w, dtype)
        self.blocks = []
        in_ch = stem_w
        for si, (width, nblocks, groups) in enumerate(stages):
            for bi in range(nblocks):
                stride = 2 if (si > 0 and bi == 0) else 1
                self.blocks.append(
                    ResidualBlock(rng, in_ch, width, stride, groups, shift_cfg,
                                  dtype))
                in_ch = width
        self.head = Linear(rng, in_ch, cfg.num_classes, dtype, gain=0.1)

    # ------------------------------------------------------------------

    def forward(self, frames, train=False, dropout_seed=0):
        """Frames [N*T, C, H, W] -> clip logits [N, num_classes]."""
        t = self.cfg.num_segments
        nt = frames.shape[0]
        if nt % t:
            raise ValueError(f"batch leading extent {nt} not divisible by T={t}")
        if frames.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"batch has {frames.shape[1]} channels, model expects "
                f"{self.cfg.in_channels}"
            )
        x = self.stem_conv.forward(frames.astype(self.dtype, copy=False))
        x = self.stem_norm.forward(x)
        self._stem_pre_relu = x
        x = ops.relu(x)
        for block in self.blocks:
            x = block.forward(x)
        self._pool_shape = x.shape
        pooled = ops.global_avg_pool(x)
        self._drop_rate = self.cfg.dropout_rate if train else 0.0
        dropped, self._drop_mask = ops.dropout(
            pooled, self._drop_rate, dropout_seed, train=train)
        frame_logits = self.head.forward(dropped)
        return frame_logits.reshape(nt // t, t, -1).mean(axis=1)

    def backward(self, grad_logits):
        """Accumulates parameter gradients from d(loss)/d(clip logits)."""
        t = self.cfg.num_segments
        n, k = grad_logits.shape
        g = np.broadcast_to(grad_logits[:, None, :], (n, t, k)).reshape(n * t, k) / t
        g = self.head.backward(np.ascontiguousarray(g))
        g = ops.dropout_backward(self._drop_mask, self._drop_rate, g)
        g = ops.global_avg_pool_backward(self._pool_shape, g)
        for block in reversed(self.blocks):
            g = block.backward(g)
        g = ops.relu_backward(self._stem_pre_relu, g)
        g = self.stem_norm.backward(g)
        return self.stem_conv.backward(g)

    # ------------------------------------------------------------------

    def _named_layers(self):
        yield "stem.conv", self.stem_conv
        yield "stem.norm", self.stem_norm
        for i, block in enumerate(self.blocks):
            for sub, layer in block.sublayers().items():
                yield f"block{i}.{sub}", layer
        yield "head", self.head

    def named_parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self._named_layers()
                for pn, p in layer.params().items()}

    def named_grads(self):
        return {f"{ln}.{pn}": g for ln, layer in self._named_layers()
                for pn, g in layer.grads().items()}

    def zero_grads(self):
        for g in self.named_grads().values():
            g[...] = 0.0

    def load_parameters(self, tensors):
        params = self.named_parameters()
        missing = set(params) ^ set(tensors)
        if missing:
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in params.items():
            src = tensors[name]
            if p.shape != src.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {p.shape} vs {src.shape}")
            p[...] = src

    def param_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def shift_call_sites(self):
        return sum(1 for b in self.blocks if b.shift_cfg is not None)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(cfg, seed=seed, dtype=dtype)
