"""
vega-align - Patch transformer encoder

Small pre-norm vision transformer used for both the trainable student
and the frozen spatial teacher. ``encode`` returns one PatchTokenMap per
block so callers can pick the layer they align or read out:
``extract_student_tokens`` takes block L-2, ``extract_teacher_tokens``
takes block L-1. The last entry is the post-final-LayerNorm output; the
others are raw residual-stream block outputs. There is no CLS token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import EncoderConfig
from .errors import ShapeError
from .params import ParameterSet, xavier_uniform
from .rng import Xoshiro256
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    swap_axes,
    transpose,
)

POS_EMBED_STD = 0.02


@dataclass
class PatchTokenMap:
    """Patch tokens ([N, d] or [B, N, d]) produced by one transformer block."""

    tokens: Tensor
    block_index: int
    source_image: str | None = None

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[-2]

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes; also the initialization order."""
    d, m = config.embed_dim, config.mlp_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (config.patch_dim, d),
        "patch_embed.bias": (d,),
        "pos_embed": (config.num_tokens, d),
    }
    for i in range(config.num_blocks):
        prefix = f"blocks.{i}"
        shapes[f"{prefix}.ln1.gain"] = (d,)
        shapes[f"{prefix}.ln1.bias"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{prefix}.attn.w{proj}"] = (d, d)
            shapes[f"{prefix}.attn.b{proj}"] = (d,)
        shapes[f"{prefix}.ln2.gain"] = (d,)
        shapes[f"{prefix}.ln2.bias"] = (d,)
        shapes[f"{prefix}.mlp.w1"] = (d, m)
        shapes[f"{prefix}.mlp.b1"] = (m,)
        shapes[f"{prefix}.mlp.w2"] = (m, d)
        shapes[f"{prefix}.mlp.b2"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    return shapes


class EncoderParams(ParameterSet):
    """All encoder weights plus the config that shaped them."""

    def __init__(
        self, config: EncoderConfig, tensors: dict[str, Tensor], frozen: bool = False
    ) -> None:
        expected = parameter_shapes(config)
        if list(tensors) != list(expected):
            raise ShapeError("encoder parameters do not match the canonical layout")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"encoder parameter {name!r}: expected {shape}, got {tensors[name].shape}"
                )
        self.config = config
        super().__init__(tensors, frozen=frozen)

    def copy(self, frozen: bool | None = None) -> EncoderParams:
        tensors = {name: Tensor(t.values) for name, t in self.tensors.items()}
        return EncoderParams(self.config, tensors, self.frozen if frozen is None else frozen)

    @classmethod
    def from_state(
        cls, config: EncoderConfig, state: dict[str, np.ndarray], frozen: bool = False
    ) -> EncoderParams:
        tensors = {name: Tensor(state[name]) for name in parameter_shapes(config)}
        return cls(config, tensors, frozen=frozen)


def count_parameters(config: EncoderConfig) -> int:
    """Closed-form parameter count."""
    d, m, n, p = config.embed_dim, config.mlp_dim, config.num_tokens, config.patch_dim
    per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * m + m) + (m * d + d)
    return p * d + d + n * d + config.num_blocks * per_block + 2 * d


def init_encoder(config: EncoderConfig, seed: int | None = None) -> EncoderParams:
    """Xavier-uniform weights, zero biases, unit gains, N(0, 0.02^2) positions.

    ``seed`` overrides ``config.seed``.
    """
    rng = Xoshiro256(config.seed if seed is None else seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "pos_embed":
            values = rng.normal(shape, scale=POS_EMBED_STD)
        elif leaf == "gain":
            values = np.ones(shape)
        elif len(shape) == 1:
            values = np.zeros(shape)
        else:
            values = xavier_uniform(rng, shape[0], shape[1])
        tensors[name] = Tensor(values)
    return EncoderParams(config, tensors)


def patchify(images: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """[B, C, H, W] -> [B, N, C*p*p] with patches in row-major grid order."""
    b = images.shape[0]
    c, g, p = config.channels, config.grid, config.patch_size
    x = images.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g * g, c * p * p)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def _attention(x: Tensor, p: dict[str, Tensor], prefix: str, config: EncoderConfig) -> Tensor:
    b, n, d = x.shape
    h, dh = config.num_heads, config.head_dim

    def heads(name: str) -> Tensor:
        proj = _linear(x, p[f"{prefix}.attn.w{name}"], p[f"{prefix}.attn.b{name}"])
        return swap_axes(reshape(proj, (b, n, h, dh)), 1, 2)

    q, k, v = heads("q"), heads("k"), heads("v")
    weights = softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh)))
    context = reshape(swap_axes(matmul(weights, v), 1, 2), (b, n, d))
    return _linear(context, p[f"{prefix}.attn.wo"], p[f"{prefix}.attn.bo"])


def _mlp(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = gelu(_linear(x, p[f"{prefix}.mlp.w1"], p[f"{prefix}.mlp.b1"]))
    return _linear(hidden, p[f"{prefix}.mlp.w2"], p[f"{prefix}.mlp.b2"])


def _block(x: Tensor, p: dict[str, Tensor], i: int, config: EncoderConfig) -> Tensor:
    prefix = f"blocks.{i}"
    x = add(x, _attention(layer_norm(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"]),
                          p, prefix, config))
    return add(x, _mlp(layer_norm(x, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"]),
                       p, prefix))


def encode(
    image: Any, params: EncoderParams, source_image: str | None = None
) -> list[PatchTokenMap]:
    """Run the encoder on one image [3, H, W] or a batch [B, 3, H, W].

    Returns exactly L token maps in block order; a single image yields
    [N, d] tokens, a batch yields [B, N, d].
    """
    config = params.config
    arr = image.values if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    want = (config.channels, config.image_size, config.image_size)
    if arr.ndim != 4 or arr.shape[1:] != want:
        raise ShapeError(
            f"encode: expected image shape {want} (optionally batched), got {arr.shape}"
        )

    p = params.tensors
    x = Tensor(patchify(arr, config))
    h = add(_linear(x, p["patch_embed.weight"], p["patch_embed.bias"]), p["pos_embed"])

    blocks: list[PatchTokenMap] = []
    last = config.num_blocks - 1
    for i in range(config.num_blocks):
        h = _block(h, p, i, config)
        out = layer_norm(h, p["final_norm.gain"], p["final_norm.bias"]) if i == last else h
        if single:
            out = reshape(out, out.shape[1:])
        blocks.append(PatchTokenMap(out, i, source_image))
    return blocks


def extract_student_tokens(blocks: list[PatchTokenMap]) -> PatchTokenMap:
    """Second-to-last block, the student's alignment layer."""
    if len(blocks) < 2:
        raise ShapeError(f"student extraction needs at least 2 blocks, got {len(blocks)}")
    return blocks[-2]


def extract_teacher_tokens(blocks: list[PatchTokenMap]) -> PatchTokenMap:
    """Final block, the teacher's alignment target."""
    if not blocks:
        raise ShapeError("teacher extraction needs at least 1 block, got 0")
    return blocks[-1]
