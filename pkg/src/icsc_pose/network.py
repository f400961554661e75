"""Small convolutional pose regressor built on the autodiff engine.

The network maps a normalized RGB image to 7 outputs: 3 position coordinates
followed by a raw (unnormalized) orientation quaternion. Each conv block is
conv3x3 -> relu -> maxpool2; the head is one or more dense layers ending in
the 7-wide regression layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import quat_from_yaw_tilt

POSE_OUTPUTS = 7

HEAD_INIT_SCALE = 0.01

# Center of the default camera sampling box plus the mean pan/tilt
# orientation; used to bias the regression head so training from random
# weights starts near the middle of the label distribution.
DEFAULT_OUTPUT_BIAS = tuple([7.0, -7.25, 6.75] + list(quat_from_yaw_tilt(20.0, -18.0)))


@dataclass
class ModelConfig:
    input_size: int = 64  # square input, pixels
    in_channels: int = 3
    conv_channels: tuple = (16, 32, 64, 64)
    kernel_size: int = 3
    dense_widths: tuple = (128,)
    output_bias: tuple = DEFAULT_OUTPUT_BIAS

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.dense_widths = tuple(self.dense_widths)
        self.output_bias = tuple(self.output_bias)
        if len(self.output_bias) != POSE_OUTPUTS:
            raise ValueError("output bias must have exactly 7 components")
        if self.input_size < 2 or self.in_channels < 1:
            raise ValueError("input size and channel count must be positive")
        if not self.conv_channels or not self.dense_widths:
            raise ValueError("need at least one conv block and one dense layer")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd (same-size padding)")
        size = self.input_size
        for _ in self.conv_channels:
            if size % 2:
                raise ValueError(f"input {self.input_size} not divisible through {len(self.conv_channels)} pools")
            size //= 2
        if size < 1:
            raise ValueError("too many pooling stages for the input size")

    @property
    def spatial_after_convs(self) -> int:
        return self.input_size // (2 ** len(self.conv_channels))

    @property
    def flat_features(self) -> int:
        return self.conv_channels[-1] * self.spatial_after_convs ** 2

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "dense_widths": list(self.dense_widths),
            "output_bias": list(self.output_bias),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(config: ModelConfig, seed: int, dtype=np.float32) -> dict:
    """Fan-in-scaled uniform weights, zero biases, centered regression bias."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params = {}
    k = config.kernel_size
    c_in = config.in_channels
    for i, c_out in enumerate(config.conv_channels):
        params[f"conv{i}_w"] = uniform((c_out, c_in, k, k), c_in * k * k)
        params[f"conv{i}_b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    d_in = config.flat_features
    for i, width in enumerate(config.dense_widths):
        params[f"dense{i}_w"] = uniform((d_in, width), d_in)
        params[f"dense{i}_b"] = np.zeros(width, dtype=dtype)
        d_in = width
    # Small head weights keep initial predictions at the output bias, so
    # orientation errors start well inside the basin where the geometric
    # consistency term and the quaternion term agree on the descent
    # direction.
    params["head_w"] = (HEAD_INIT_SCALE * uniform((d_in, POSE_OUTPUTS), d_in)).astype(dtype)
    params["head_b"] = np.array(config.output_bias, dtype=dtype)
    return params


class PoseRegressor:
    """Config-driven forward pass; parameters live in a name -> Tensor dict."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = {
            name: arr if isinstance(arr, ad.Tensor) else ad.Tensor(arr, requires_grad=True, name=name)
            for name, arr in params.items()
        }
        self._last_output = None

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
        self._last_output = None

    def forward(self, images: np.ndarray) -> ad.Tensor:
        """images: (C,H,W) or (N,C,H,W), already normalized to [-1, 1]."""
        images = np.asarray(images)
        single = images.ndim == 3
        if single:
            images = images[None]
        n, c, h, w = images.shape
        if c != self.config.in_channels or h != self.config.input_size or w != self.config.input_size:
            raise ValueError(
                f"expected (N,{self.config.in_channels},{self.config.input_size},"
                f"{self.config.input_size}) input, got {images.shape}")
        pad = self.config.kernel_size // 2
        x = ad.Tensor(images)
        for i in range(len(self.config.conv_channels)):
            x = ad.conv2d(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"], padding=pad)
            x = ad.relu(x)
            x = ad.maxpool2(x)
        x = ad.flatten(x)
        for i in range(len(self.config.dense_widths)):
            x = ad.relu(ad.linear(x, self.params[f"dense{i}_w"], self.params[f"dense{i}_b"]))
        x = ad.linear(x, self.params["head_w"], self.params["head_b"])
        self._last_output = x
        if single:
            # Flatten the unit batch but keep the graph available via backward().
            out = ad.Tensor(x.data[0], x.requires_grad, (x,))

            def backward(g):
                x._accumulate(g[None])

            out._backward = backward
            self._last_output = out
            return out
        return x

    def backward(self, loss_grad: np.ndarray):
        """Push d(loss)/d(output) through the graph recorded by forward."""
        if self._last_output is None:
            raise RuntimeError("backward requires a recorded forward pass")
        self._last_output.backward(np.asarray(loss_grad, dtype=self._last_output.data.dtype))

    def gradients(self) -> dict:
        return {name: p.grad for name, p in self.params.items()}
