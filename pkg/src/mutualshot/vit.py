"""Compact transformer classifier over patchified multichannel windows.

A window ``(C, N)`` is cut along time into ``N / patch_len`` patches spanning
all channels. Patches are linearly embedded, given learned positional
vectors, passed through pre-norm encoder blocks, layer-normed, mean-pooled
over tokens and mapped to class probabilities by a linear head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class VitConfig:
    n_channels: int
    n_samples: int
    n_classes: int
    patch_len: int = 32
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 128

    def __post_init__(self):
        if self.n_samples % self.patch_len:
            raise ValueError(f"N={self.n_samples} not divisible by patch_len={self.patch_len}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def n_patches(self) -> int:
        return self.n_samples // self.patch_len

    def to_dict(self) -> dict:
        return asdict(self)


def patchify(samples: np.ndarray, patch_len: int) -> np.ndarray:
    """``(B, C, N)`` or ``(C, N)`` -> ``(B, N/patch_len, C*patch_len)``.

    Patch ``j`` holds columns ``[j*patch_len, (j+1)*patch_len)`` of every
    channel, flattened channel-major.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b, c, n = x.shape
    if n % patch_len:
        raise ValueError(f"N={n} not divisible by patch_len={patch_len}")
    t = n // patch_len
    return x.reshape(b, c, t, patch_len).transpose(0, 2, 1, 3).reshape(b, t, c * patch_len)


class VisionTransformer:
    classifier_names = ("head.w", "head.b")

    def __init__(self, config: VitConfig, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.config = cfg = config
        d, f = cfg.d_model, cfg.d_ff
        p_in = cfg.n_channels * cfg.patch_len

        def w(fan_in, shape):
            return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape), requires_grad=True)

        def const(value, shape):
            return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)

        params = {
            "patch.w": w(p_in, (p_in, d)),
            "patch.b": const(0.0, d),
            "pos": Tensor(rng.normal(0.0, 0.02, (cfg.n_patches, d)), requires_grad=True),
        }
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            params.update({
                pre + "ln1.g": const(1.0, d), pre + "ln1.b": const(0.0, d),
                pre + "attn.wqkv": w(d, (d, 3 * d)), pre + "attn.bqkv": const(0.0, 3 * d),
                pre + "attn.wo": w(d, (d, d)), pre + "attn.bo": const(0.0, d),
                pre + "ln2.g": const(1.0, d), pre + "ln2.b": const(0.0, d),
                pre + "ff.w1": w(d, (d, f)), pre + "ff.b1": const(0.0, f),
                pre + "ff.w2": w(f, (f, d)), pre + "ff.b2": const(0.0, d),
            })
        params.update({
            "norm.g": const(1.0, d), "norm.b": const(0.0, d),
            "head.w": w(d, (d, cfg.n_classes)), "head.b": const(0.0, cfg.n_classes),
        })
        self.params: dict[str, Tensor] = params
        self.last_attention: list[np.ndarray] = []

    # ----------------------------------------------------------- forward
    def _attention(self, h: Tensor, pre: str) -> Tensor:
        cfg = self.config
        b, t, d = h.shape
        nh, dh = cfg.n_heads, d // cfg.n_heads
        qkv = ag.linear(h, self.params[pre + "wqkv"], self.params[pre + "bqkv"])
        qkv = qkv.reshape(b, t, 3, nh, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ag.scale(ag.matmul(q, ag.swap_last(k)), 1.0 / np.sqrt(dh))
        attn = ag.softmax(scores, axis=-1)
        self.last_attention.append(attn.data)
        out = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return ag.linear(out, self.params[pre + "wo"], self.params[pre + "bo"])

    def tokens(self, samples) -> Tensor:
        """Encoded token sequence ``(B, T, d_model)`` after the final norm."""
        cfg = self.config
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (cfg.n_channels, cfg.n_samples):
            raise ValueError(f"expected windows of shape {(cfg.n_channels, cfg.n_samples)}, "
                             f"got {x.shape[1:]}")
        p = self.params
        self.last_attention = []
        h = ag.linear(Tensor(patchify(x, cfg.patch_len)), p["patch.w"], p["patch.b"])
        h = h + p["pos"]
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            a = ag.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            h = h + self._attention(a, pre + "attn.")
            m = ag.layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            m = ag.linear(ag.gelu(ag.linear(m, p[pre + "ff.w1"], p[pre + "ff.b1"])),
                          p[pre + "ff.w2"], p[pre + "ff.b2"])
            h = h + m
        return ag.layer_norm(h, p["norm.g"], p["norm.b"])

    def encode(self, samples) -> Tensor:
        """Mean-pooled pre-head representation ``(B, d_model)``."""
        return ag.mean(self.tokens(samples), axis=1)

    def head(self, z: Tensor) -> Tensor:
        return ag.softmax(ag.linear(z, self.params["head.w"], self.params["head.b"]))

    def forward(self, samples) -> Tensor:
        return self.head(self.encode(samples))

    __call__ = forward

    def predict(self, samples) -> np.ndarray:
        return np.argmax(self.forward(samples).data, axis=1)

    def representation(self, samples) -> np.ndarray:
        return self.encode(samples).data

    # ----------------------------------------------------------- parameters
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def set_classifier_frozen(self, frozen: bool):
        for name in self.classifier_names:
            self.params[name].requires_grad = not frozen

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)


def vit_forward(model: VisionTransformer, window) -> np.ndarray:
    return model.forward(np.asarray(window)[None] if np.ndim(window) == 2 else window).data[0]


def vit_loss(model: VisionTransformer, windows, y) -> Tensor:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    return ag.cross_entropy(model.forward(windows), np.atleast_1d(y))
