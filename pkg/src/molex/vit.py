"""Vision-transformer backbone with per-parameter freeze flags and
adapter attachment points on the MLP (and optionally attention) sub-layers.

The layout follows the CLIP visual tower: patch embedding without bias, a
learned class token, learned positional embeddings, pre-norm residual
blocks, and a final layer norm whose class-token row is the feature the
classifier head consumes. The contrastive projection is carried only as an
optional weight (the default head reads the pre-projection embedding; a
config flag switches to the projected one).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import mole, rng
from . import tensor as T
from .mole import LoraExpert, MoleConfig, lora_forward, mole_mlp_forward
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ViTConfig:
    name: str
    image_size: int
    patch_size: int
    embed_dim: int
    depth: int
    num_heads: int
    mlp_hidden: int
    channels: int = 3
    projection_dim: int | None = None
    head_input: str = "pre_projection"    # pre_projection | projection
    activation: str = "gelu"              # gelu | quick_gelu (CLIP towers)
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.activation not in ("gelu", "quick_gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed dim {self.embed_dim} not divisible by {self.num_heads} heads")
        if self.head_input not in ("pre_projection", "projection"):
            raise ValueError(f"unknown head_input {self.head_input!r}")
        if self.head_input == "projection" and self.projection_dim is None:
            raise ValueError("projection head requested but no projection_dim set")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def feature_dim(self) -> int:
        return self.projection_dim if self.head_input == "projection" else self.embed_dim


_PRESETS = {
    "b32": dict(image_size=224, patch_size=32, embed_dim=768, depth=12,
                num_heads=12, mlp_hidden=3072, projection_dim=512,
                activation="quick_gelu"),
    "b16": dict(image_size=224, patch_size=16, embed_dim=768, depth=12,
                num_heads=12, mlp_hidden=3072, projection_dim=512,
                activation="quick_gelu"),
    "l14": dict(image_size=224, patch_size=14, embed_dim=1024, depth=24,
                num_heads=16, mlp_hidden=4096, projection_dim=768,
                activation="quick_gelu"),
    "toy-16": dict(image_size=16, patch_size=8, embed_dim=16, depth=2,
                   num_heads=2, mlp_hidden=64),
    "toy-64": dict(image_size=64, patch_size=8, embed_dim=64, depth=6,
                   num_heads=4, mlp_hidden=256),
}


def preset(name: str, **overrides) -> ViTConfig:
    key = name.lower().replace("/", "").replace("vit-", "")
    if key not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    params = dict(_PRESETS[key])
    params.update(overrides)
    return ViTConfig(name=key, **params)


def last_blocks(config: ViTConfig, count: int) -> tuple:
    if count > config.depth:
        raise ValueError(f"cannot adapt last {count} of {config.depth} blocks")
    return tuple(range(config.depth - count, config.depth))


class BackboneWeights:
    """Named parameter store; every tensor carries a frozen flag."""

    def __init__(self, config: ViTConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.frozen = {name: True for name in params}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def parameter_count(self, include_projection: bool = False) -> int:
        total = 0
        for name, p in self.params.items():
            if name == "backbone.proj" and not include_projection:
                continue
            total += p.size
        return total

    def fingerprint(self) -> bytes:
        """Order-stable digest of every frozen parameter's bytes."""
        import hashlib
        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.digest()


def parameter_shapes(config: ViTConfig, include_projection: bool | None = None) -> dict[str, tuple]:
    """Canonical name -> shape map for the backbone."""
    d = config.embed_dim
    hidden = config.mlp_hidden
    shapes: dict[str, tuple] = {
        "backbone.patch_embed.weight": (d, config.channels, config.patch_size, config.patch_size),
        "backbone.cls_token": (d,),
        "backbone.pos_embed": (config.num_tokens, d),
        "backbone.ln_pre.gain": (d,),
        "backbone.ln_pre.bias": (d,),
    }
    for i in range(config.depth):
        b = f"backbone.block{i}"
        shapes[f"{b}.ln1.gain"] = (d,)
        shapes[f"{b}.ln1.bias"] = (d,)
        for proj in ("q", "k", "v", "out"):
            shapes[f"{b}.attn.{proj}.weight"] = (d, d)
            shapes[f"{b}.attn.{proj}.bias"] = (d,)
        shapes[f"{b}.ln2.gain"] = (d,)
        shapes[f"{b}.ln2.bias"] = (d,)
        shapes[f"{b}.mlp.fc1.weight"] = (hidden, d)
        shapes[f"{b}.mlp.fc1.bias"] = (hidden,)
        shapes[f"{b}.mlp.fc2.weight"] = (d, hidden)
        shapes[f"{b}.mlp.fc2.bias"] = (d,)
    shapes["backbone.ln_post.gain"] = (d,)
    shapes["backbone.ln_post.bias"] = (d,)
    wants_proj = include_projection
    if wants_proj is None:
        wants_proj = config.projection_dim is not None
    if wants_proj and config.projection_dim is not None:
        shapes["backbone.proj"] = (d, config.projection_dim)
    return shapes


def count_backbone_params(config: ViTConfig, include_projection: bool = False) -> int:
    shapes = parameter_shapes(config, include_projection=include_projection)
    return sum(int(np.prod(s)) for s in shapes.values())


def build_backbone(config: ViTConfig, seed: int = 0) -> BackboneWeights:
    """Randomly initialized frozen backbone (stands in for a pretrained one)."""
    include_proj = config.projection_dim is not None
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config, include_projection=include_proj).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        elif name in ("backbone.cls_token", "backbone.pos_embed"):
            data = rng.gaussian(seed, shape, 0.02, "backbone", name)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            data = rng.gaussian(seed, shape, fan_in ** -0.5, "backbone", name)
        params[name] = Tensor(data)
    return BackboneWeights(config, params)


def zero_backbone(config: ViTConfig) -> BackboneWeights:
    """All-zero weights except unit layer-norm gains (a propagation probe)."""
    params = {}
    for name, shape in parameter_shapes(config).items():
        data = np.ones(shape) if name.endswith(".gain") else np.zeros(shape)
        params[name] = Tensor(data)
    return BackboneWeights(config, params)


# adapter attachment --------------------------------------------------

class MoleAttachment:
    """Expert layers and routers bound to specific backbone blocks."""

    def __init__(self, config: ViTConfig, mole_config: MoleConfig, seed: int = 0):
        for i in mole_config.adapted_blocks:
            if not 0 <= i < config.depth:
                raise ValueError(
                    f"adapter block index {i} out of range for depth {config.depth}")
        self.mole_config = mole_config
        self.mlp_layers: dict[int, mole.MoleLayer] = {}
        self.msa_experts: dict[int, dict[str, LoraExpert]] = {}
        d = config.embed_dim
        for i in mole_config.adapted_blocks:
            if mole_config.placement in ("mlp", "both"):
                self.mlp_layers[i] = mole.make_mole_layer(
                    d, mole_config.shared_rank, mole_config.separate_ranks,
                    mole_config.shared_alpha, mole_config.separate_alphas,
                    mole_config.use_shared, mole_config.use_separate,
                    mole_config.gate_weighting, seed, "mole", f"block{i}")
            if mole_config.placement in ("msa", "both"):
                self.msa_experts[i] = {
                    proj: mole.make_expert(d, mole_config.msa_rank, None,
                                           seed, "mole", f"block{i}", "msa", proj)
                    for proj in ("q", "k", "v", "out")}

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i in sorted(self.mlp_layers):
            layer = self.mlp_layers[i]
            prefix = f"mole.block{i}"
            if layer.shared is not None:
                out[f"{prefix}.shared.A"] = layer.shared.A
                out[f"{prefix}.shared.B"] = layer.shared.B
            for j, expert in enumerate(layer.separate):
                out[f"{prefix}.expert{j}.A"] = expert.A
                out[f"{prefix}.expert{j}.B"] = expert.B
            if layer.router is not None:
                out[f"{prefix}.router.W"] = layer.router.W
        for i in sorted(self.msa_experts):
            for proj, expert in self.msa_experts[i].items():
                out[f"mole.block{i}.msa.{proj}.A"] = expert.A
                out[f"mole.block{i}.msa.{proj}.B"] = expert.B
        return out


# forward pass ---------------------------------------------------------

def patchify(config: ViTConfig, weights: BackboneWeights, images) -> Tensor:
    """[B, C, H, W] images -> [B, tokens, d] with CLS and positions added."""
    pixels = np.asarray(images, dtype=np.float64)
    if pixels.ndim != 4:
        raise ShapeError(f"expected [B, C, H, W] images, got shape {pixels.shape}")
    batch, channels, h, w = pixels.shape
    p = config.patch_size
    if channels != config.channels or h != config.image_size or w != config.image_size:
        raise ShapeError(
            f"images {pixels.shape} do not match config "
            f"[{config.channels}, {config.image_size}, {config.image_size}]")
    if h % p or w % p:
        raise ShapeError(f"image size {h}x{w} not divisible by patch size {p}")
    g = config.grid
    patches = pixels.reshape(batch, channels, g, p, g, p)
    patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(batch, g * g, channels * p * p)
    kernel = weights["backbone.patch_embed.weight"]
    flat_kernel = T.reshape(kernel, (config.embed_dim, channels * p * p))
    tokens = T.matmul(Tensor(patches), T.transpose(flat_kernel))
    cls = T.reshape(weights["backbone.cls_token"], (1, 1, config.embed_dim))
    cls = cls + Tensor(np.zeros((batch, 1, 1)))
    tokens = T.concat([cls, tokens], axis=1)
    return tokens + weights["backbone.pos_embed"]


def _linear(x: Tensor, weights: BackboneWeights, name: str) -> Tensor:
    return T.matmul(x, T.transpose(weights[f"{name}.weight"])) + weights[f"{name}.bias"]


def _activate(x: Tensor, config: ViTConfig) -> Tensor:
    if config.activation == "quick_gelu":
        return x * T.sigmoid(x * 1.702)
    return T.gelu(x)


def _attention(x: Tensor, weights: BackboneWeights, block: str, config: ViTConfig,
               adapters: dict[str, LoraExpert] | None) -> Tensor:
    batch, tokens, d = x.shape
    heads = config.num_heads
    head_dim = d // heads

    def project(name: str, source: Tensor) -> Tensor:
        out = _linear(source, weights, f"{block}.attn.{name}")
        if adapters and name in adapters:
            out = out + lora_forward(source, adapters[name])
        return out

    def split(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (batch, tokens, heads, head_dim)), (0, 2, 1, 3))

    q = split(project("q", x))
    k = split(project("k", x))
    v = split(project("v", x))
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (head_dim ** -0.5)
    attn = T.softmax(scores, axis=-1)
    mixed = T.matmul(attn, v)
    merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (batch, tokens, d))
    out = _linear(merged, weights, f"{block}.attn.out")
    if adapters and "out" in adapters:
        out = out + lora_forward(merged, adapters["out"])
    return out


def vit_forward(config: ViTConfig, weights: BackboneWeights, images,
                attachment: MoleAttachment | None = None):
    """Backbone pass; returns (feature [B, feature_dim], per-block routing stats).

    Stats are keyed by block index, in block order, only for blocks whose
    MLP carries a separate-expert mixture.
    """
    x = patchify(config, weights, images)
    batch, tokens, d = x.shape
    x = T.layer_norm(x, weights["backbone.ln_pre.gain"], weights["backbone.ln_pre.bias"],
                     config.ln_eps)
    stats: list[tuple[int, mole.RoutingStats]] = []
    mole_cfg = attachment.mole_config if attachment is not None else None
    for i in range(config.depth):
        block = f"backbone.block{i}"
        attn_in = T.layer_norm(x, weights[f"{block}.ln1.gain"], weights[f"{block}.ln1.bias"],
                               config.ln_eps)
        msa_adapters = attachment.msa_experts.get(i) if attachment else None
        x = x + _attention(attn_in, weights, block, config, msa_adapters)
        mlp_in = T.layer_norm(x, weights[f"{block}.ln2.gain"], weights[f"{block}.ln2.bias"],
                              config.ln_eps)

        def frozen_mlp(t: Tensor, _block: str = block) -> Tensor:
            hidden = _activate(_linear(t, weights, f"{_block}.mlp.fc1"), config)
            return _linear(hidden, weights, f"{_block}.mlp.fc2")

        layer = attachment.mlp_layers.get(i) if attachment else None
        if layer is None:
            x = x + frozen_mlp(mlp_in)
        else:
            flat = T.reshape(mlp_in, (batch * tokens, d))
            mask = None
            if mole_cfg is not None and not mole_cfg.route_cls:
                mask = np.ones(batch * tokens)
                mask[0::tokens] = 0.0
            h, layer_stats = mole_mlp_forward(flat, frozen_mlp, layer, route_mask=mask)
            x = x + T.reshape(h, (batch, tokens, d))
            if layer_stats is not None:
                stats.append((i, layer_stats))
    cls = T.reshape(T.take(x, [0], axis=1), (batch, d))
    cls = T.layer_norm(cls, weights["backbone.ln_post.gain"], weights["backbone.ln_post.bias"],
                       config.ln_eps)
    if config.head_input == "projection":
        cls = T.matmul(cls, weights["backbone.proj"])
    return cls, stats


# parameter accounting -------------------------------------------------

def count_trainable(config: ViTConfig, mole_config: MoleConfig) -> dict:
    """Trainable / total parameter counts and the trainable percentage.

    The frozen denominator is the backbone without the contrastive
    projection unless the head actually consumes the projected feature;
    that reading reproduces the published per-block percentages.
    """
    d = config.embed_dim
    per_block = 0
    if mole_config.placement in ("mlp", "both"):
        if mole_config.use_shared:
            per_block += 2 * d * mole_config.shared_rank
        if mole_config.use_separate:
            per_block += 2 * d * sum(mole_config.separate_ranks)
            per_block += mole_config.num_experts * d
    if mole_config.placement in ("msa", "both"):
        per_block += 4 * 2 * d * mole_config.msa_rank
    head = config.feature_dim + 1
    trainable = per_block * len(mole_config.adapted_blocks) + head
    frozen = count_backbone_params(
        config, include_projection=config.head_input == "projection")
    total = trainable + frozen
    return {
        "trainable_count": trainable,
        "total_count": total,
        "percentage": 100.0 * trainable / total,
    }
