"""Parameter-name mapping from published CLIP visual towers to archive names.

A NameMap is an ordered list of conversion rules. Most rules copy one
source tensor; the fused attention projection splits into three. The map
is total over the visual tower: every expected source key must be present,
and anything left over is reported, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PresetShape:
    name: str
    embed_dim: int
    depth: int
    patch_size: int
    image_size: int
    mlp_hidden: int
    projection_dim: int

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2 + 1


PRESETS = {
    "b32": PresetShape("b32", 768, 12, 32, 224, 3072, 512),
    "b16": PresetShape("b16", 768, 12, 16, 224, 3072, 512),
    "l14": PresetShape("l14", 1024, 24, 14, 224, 4096, 768),
}


@dataclass(frozen=True)
class Rule:
    source: str
    dest: str
    shape: tuple
    # Fused q/k/v tensors carry a row range to slice out.
    rows: tuple | None = None


def build_rules(preset: PresetShape) -> list[Rule]:
    d = preset.embed_dim
    hidden = preset.mlp_hidden
    rules = [
        Rule("conv1.weight", "backbone.patch_embed.weight",
             (d, 3, preset.patch_size, preset.patch_size)),
        Rule("class_embedding", "backbone.cls_token", (d,)),
        Rule("positional_embedding", "backbone.pos_embed", (preset.tokens, d)),
        Rule("ln_pre.weight", "backbone.ln_pre.gain", (d,)),
        Rule("ln_pre.bias", "backbone.ln_pre.bias", (d,)),
    ]
    for i in range(preset.depth):
        src = f"transformer.resblocks.{i}"
        dst = f"backbone.block{i}"
        rules += [
            Rule(f"{src}.ln_1.weight", f"{dst}.ln1.gain", (d,)),
            Rule(f"{src}.ln_1.bias", f"{dst}.ln1.bias", (d,)),
        ]
        for j, proj in enumerate(("q", "k", "v")):
            rules.append(Rule(f"{src}.attn.in_proj_weight", f"{dst}.attn.{proj}.weight",
                              (3 * d, d), rows=(j * d, (j + 1) * d)))
            rules.append(Rule(f"{src}.attn.in_proj_bias", f"{dst}.attn.{proj}.bias",
                              (3 * d,), rows=(j * d, (j + 1) * d)))
        rules += [
            Rule(f"{src}.attn.out_proj.weight", f"{dst}.attn.out.weight", (d, d)),
            Rule(f"{src}.attn.out_proj.bias", f"{dst}.attn.out.bias", (d,)),
            Rule(f"{src}.ln_2.weight", f"{dst}.ln2.gain", (d,)),
            Rule(f"{src}.ln_2.bias", f"{dst}.ln2.bias", (d,)),
            Rule(f"{src}.mlp.c_fc.weight", f"{dst}.mlp.fc1.weight", (hidden, d)),
            Rule(f"{src}.mlp.c_fc.bias", f"{dst}.mlp.fc1.bias", (hidden,)),
            Rule(f"{src}.mlp.c_proj.weight", f"{dst}.mlp.fc2.weight", (d, hidden)),
            Rule(f"{src}.mlp.c_proj.bias", f"{dst}.mlp.fc2.bias", (d,)),
        ]
    rules += [
        Rule("ln_post.weight", "backbone.ln_post.gain", (d,)),
        Rule("ln_post.bias", "backbone.ln_post.bias", (d,)),
        Rule("proj", "backbone.proj", (d, preset.projection_dim)),
    ]
    return rules


def expected_parameter_count(preset: PresetShape) -> int:
    """Total visual-tower scalars, projection included (the ~87.85M figure for b32)."""
    seen = {}
    for rule in build_rules(preset):
        seen[rule.source] = rule.shape
    total = 0
    for shape in seen.values():
        n = 1
        for s in shape:
            n *= s
        total += n
    return total
