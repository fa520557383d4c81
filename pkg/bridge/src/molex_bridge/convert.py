"""Checkpoint-to-archive conversion with shape validation and a manifest."""

from __future__ import annotations

import hashlib

import numpy as np

from . import archive
from .namemap import PRESETS, build_rules


class ConversionError(ValueError):
    pass


def load_state_dict(path: str) -> dict:
    """Read a torch checkpoint into a flat name -> float32 array dict.

    Accepts plain state dicts, {'state_dict': ...} wrappers, and
    TorchScript archives (the format OpenAI ships CLIP in).
    """
    import torch

    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception:
        blob = torch.jit.load(path, map_location="cpu")
    if hasattr(blob, "state_dict"):
        blob = blob.state_dict()
    if isinstance(blob, dict) and "state_dict" in blob and isinstance(blob["state_dict"], dict):
        blob = blob["state_dict"]
    if not isinstance(blob, dict):
        raise ConversionError(f"{path}: unsupported checkpoint structure {type(blob)!r}")
    out = {}
    for name, value in blob.items():
        if hasattr(value, "detach"):
            out[name] = value.detach().to(torch.float32).cpu().numpy()
    return out


def _strip_visual_prefix(state: dict) -> tuple[dict, list[str]]:
    """Split into (visual-tower keys minus prefix, every other key)."""
    prefix = None
    for candidate in ("visual.", "module.visual.", "model.visual.", ""):
        if any(k == candidate + "conv1.weight" for k in state):
            prefix = candidate
            break
    if prefix is None:
        raise ConversionError(
            "checkpoint has no visual tower (no '<prefix>conv1.weight' key found)")
    visual = {}
    others = []
    for key, value in state.items():
        if prefix and key.startswith(prefix):
            visual[key[len(prefix):]] = value
        elif not prefix and ("transformer.resblocks" in key or key in
                             ("conv1.weight", "class_embedding", "positional_embedding",
                              "ln_pre.weight", "ln_pre.bias", "ln_post.weight",
                              "ln_post.bias", "proj")):
            visual[key] = value
        else:
            others.append(key)
    return visual, others


def convert(checkpoint_path: str, preset_name: str, out_path: str) -> dict:
    """Write the archive and its manifest; returns a conversion summary."""
    preset = PRESETS.get(preset_name)
    if preset is None:
        raise ConversionError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
    state = load_state_dict(checkpoint_path)
    visual, skipped = _strip_visual_prefix(state)

    rules = build_rules(preset)
    missing = sorted({r.source for r in rules} - set(visual))
    if missing:
        raise ConversionError(
            f"checkpoint is missing {len(missing)} visual-tower tensors: {missing[:8]}"
            + ("..." if len(missing) > 8 else ""))

    entries: dict[str, np.ndarray] = {}
    consumed = set()
    for rule in rules:
        tensor = np.asarray(visual[rule.source], dtype=np.float32)
        if tensor.shape != rule.shape:
            raise ConversionError(
                f"tensor {rule.source!r}: shape {tensor.shape} does not match "
                f"{preset.name} expectation {rule.shape}")
        consumed.add(rule.source)
        if rule.rows is not None:
            tensor = tensor[rule.rows[0]:rule.rows[1]]
        entries[rule.dest] = np.ascontiguousarray(tensor)

    leftover_visual = sorted(set(visual) - consumed)
    unmapped = leftover_visual + sorted(skipped)
    archive.write(out_path, entries)

    total = sum(int(np.prod(v.shape)) for k, v in visual.items() if k in consumed)
    manifest_path = out_path + ".manifest"
    with open(manifest_path, "w") as f:
        f.write(f"# preset={preset.name} parameters={total} entries={len(entries)}\n")
        f.write("name\tshape\tsha256_16\n")
        for name, arr in entries.items():
            digest = hashlib.sha256(arr.tobytes()).hexdigest()[:16]
            f.write(f"{name}\t{'x'.join(str(s) for s in arr.shape)}\t{digest}\n")
        f.write(f"# unmapped ({len(unmapped)} keys, not converted):\n")
        for key in unmapped:
            f.write(f"# skip {key}\n")
    return {
        "archive": out_path,
        "manifest": manifest_path,
        "entries": len(entries),
        "parameters": total,
        "unmapped": unmapped,
    }


def reexport(archive_path: str, out_path: str) -> None:
    """Round-trip an archive byte-for-byte (order and dtypes preserved)."""
    archive.write(out_path, archive.read(archive_path))
