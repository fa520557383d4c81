import numpy as np
import pytest
import torch

from molex_bridge import archive, namemap
from molex_bridge.convert import ConversionError, convert, reexport


def synthetic_clip_state(preset: namemap.PresetShape, prefix="visual.", seed=0):
    """State dict with the exact published shapes, cheap deterministic values."""
    gen = torch.Generator().manual_seed(seed)
    state = {}
    seen = set()
    for rule in namemap.build_rules(preset):
        if rule.source in seen:
            continue
        seen.add(rule.source)
        state[prefix + rule.source] = torch.rand(rule.shape, generator=gen) - 0.5
    # a couple of text-tower keys that must be listed, not converted
    state["token_embedding.weight"] = torch.zeros(16, 8)
    state["logit_scale"] = torch.tensor(4.6)
    return state


@pytest.fixture(scope="module")
def b32_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "b32.pt"
    torch.save(synthetic_clip_state(namemap.PRESETS["b32"]), str(path))
    return str(path)


class TestNameMap:
    def test_injective_destinations(self):
        for preset in namemap.PRESETS.values():
            rules = namemap.build_rules(preset)
            dests = [r.dest for r in rules]
            assert len(dests) == len(set(dests)), preset.name

    def test_b32_expected_count_matches_published_total(self):
        # the ~87.85M visual tower, contrastive projection included
        assert namemap.expected_parameter_count(namemap.PRESETS["b32"]) == 87_849_216

    def test_l14_and_b16_counts(self):
        assert namemap.expected_parameter_count(namemap.PRESETS["l14"]) == 303_966_208
        assert namemap.expected_parameter_count(namemap.PRESETS["b16"]) == 86_192_640


class TestConvert:
    def test_b32_conversion_count_and_manifest(self, b32_checkpoint, tmp_path):
        out = str(tmp_path / "b32.arc")
        summary = convert(b32_checkpoint, "b32", out)
        assert summary["parameters"] == 87_849_216
        entries = archive.read(out)
        assert sum(int(np.prod(v.shape)) for v in entries.values()) == 87_849_216
        assert all(v.dtype == np.float32 for v in entries.values())
        manifest = open(summary["manifest"]).read()
        assert "backbone.block11.mlp.fc2.weight" in manifest
        assert "skip token_embedding.weight" in manifest
        assert "skip logit_scale" in manifest

    def test_qkv_split_matches_fused_rows(self, b32_checkpoint, tmp_path):
        out = str(tmp_path / "b32.arc")
        convert(b32_checkpoint, "b32", out)
        entries = archive.read(out)
        state = torch.load(b32_checkpoint, weights_only=False)
        fused = state["visual.transformer.resblocks.0.attn.in_proj_weight"].numpy()
        assert np.array_equal(entries["backbone.block0.attn.q.weight"], fused[:768])
        assert np.array_equal(entries["backbone.block0.attn.k.weight"], fused[768:1536])
        assert np.array_equal(entries["backbone.block0.attn.v.weight"], fused[1536:])

    def test_round_trip_byte_identical(self, b32_checkpoint, tmp_path):
        first = str(tmp_path / "a.arc")
        second = str(tmp_path / "b.arc")
        convert(b32_checkpoint, "b32", first)
        reexport(first, second)
        assert open(first, "rb").read() == open(second, "rb").read()

    def test_truncated_checkpoint_lists_missing_names(self, tmp_path):
        state = synthetic_clip_state(namemap.PRESETS["b32"])
        for key in list(state):
            if "resblocks.11" in key or key == "visual.proj":
                del state[key]
        path = str(tmp_path / "trunc.pt")
        torch.save(state, path)
        with pytest.raises(ConversionError, match="missing") as err:
            convert(path, "b32", str(tmp_path / "x.arc"))
        assert "resblocks.11" in str(err.value) or "proj" in str(err.value)

    def test_shape_mismatch_names_offending_tensor(self, tmp_path):
        state = synthetic_clip_state(namemap.PRESETS["b32"])
        state["visual.ln_post.weight"] = torch.zeros(99)
        path = str(tmp_path / "bad.pt")
        torch.save(state, path)
        with pytest.raises(ConversionError, match="ln_post.weight"):
            convert(path, "b32", str(tmp_path / "x.arc"))

    def test_wrong_preset_rejected(self, b32_checkpoint, tmp_path):
        # a b32 tower read as l14 fails fast on the deeper blocks it lacks
        with pytest.raises(ConversionError, match="missing"):
            convert(b32_checkpoint, "l14", str(tmp_path / "x.arc"))
        with pytest.raises(ConversionError, match="unknown preset"):
            convert(b32_checkpoint, "huge", str(tmp_path / "x.arc"))

    def test_bare_prefix_checkpoint(self, tmp_path):
        state = synthetic_clip_state(namemap.PRESETS["b32"], prefix="")
        path = str(tmp_path / "bare.pt")
        torch.save(state, path)
        summary = convert(path, "b32", str(tmp_path / "bare.arc"))
        assert summary["parameters"] == 87_849_216


class TestPrimaryLoadability:
    def test_converted_archive_loads_into_the_training_stack(self, b32_checkpoint, tmp_path):
        molex_trainer = pytest.importorskip("molex.trainer")
        molex_vit = pytest.importorskip("molex.vit")
        out = str(tmp_path / "b32.arc")
        convert(b32_checkpoint, "b32", out)
        config = molex_vit.preset("b32")
        backbone = molex_trainer.load_backbone(out, config)
        assert backbone.parameter_count(include_projection=True) == 87_849_216
        # widened to training precision on load
        assert backbone["backbone.cls_token"].data.dtype == np.float64

    def test_cosine_parity_smoke_is_manual(self):
        """Numerical parity against a reference CLIP run needs real published
        weights, which this environment does not ship. The manual recipe:

            molex-bridge --checkpoint ViT-B-32.pt --preset b32 --out b32.arc
            # reference: encode a fixed image with the published model,
            # keeping the pre-projection CLS feature
            # ours: molex.trainer.load_backbone('b32.arc', preset('b32'))
            #       + vit_forward on the same normalized pixels
            # assert cosine similarity > 0.999

        Kept here as documentation; see bridge/README.md.
        """
        assert True
