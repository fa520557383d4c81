"""Fine-tuning and evaluation orchestration.

Training optimizes only the expert/router/head parameters against
bce + lambda * sum of per-block balance losses, on balanced batches drawn
from a corpus split. Every stochastic choice is a pure function of
(seed, step), so a checkpointed run resumed mid-stream replays the exact
remaining steps.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import archive, forge, metrics, mole, rng, vit
from . import tensor as T
from .tensor import Tensor
from .optim import AdamW


@dataclass(frozen=True)
class RunConfig:
    preset: str = "b32"
    adapted_blocks: tuple | None = None     # explicit block indices; else last-k
    adapted_last: int = 3
    shared_rank: int = 8
    separate_ranks: tuple = (4, 8, 16)
    shared_alpha: float | None = None
    separate_alphas: tuple | None = None
    balance_coefficient: float = 0.01
    placement: str = "mlp"
    use_shared: bool = True
    use_separate: bool = True
    gate_weighting: str = "probability"
    route_cls: bool = True
    head_input: str = "pre_projection"
    init_mode: str = "standard"             # standard | collapse
    lr: float = 6e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 128
    steps: int = 500
    seed: int = 0
    backbone_seed: int | None = None
    backbone_archive: str | None = None
    augment_p: float = 0.1
    blur_max: float = 3.0
    jpeg_min: int = 30
    jpeg_max: int = 100
    normalize_mean: float = 0.5
    normalize_std: float = 0.5
    corpus: str | None = None
    out: str | None = None
    log_every: int = 25

    def vit_config(self) -> vit.ViTConfig:
        return vit.preset(self.preset, head_input=self.head_input)

    def blocks(self, config: vit.ViTConfig | None = None) -> tuple:
        config = config or self.vit_config()
        if self.adapted_blocks is not None:
            return tuple(self.adapted_blocks)
        if self.adapted_last == 0:
            return ()
        return vit.last_blocks(config, self.adapted_last)

    def mole_config(self, config: vit.ViTConfig | None = None) -> mole.MoleConfig:
        return mole.MoleConfig(
            adapted_blocks=self.blocks(config),
            shared_rank=self.shared_rank,
            separate_ranks=tuple(self.separate_ranks),
            shared_alpha=self.shared_alpha,
            separate_alphas=None if self.separate_alphas is None else tuple(self.separate_alphas),
            balance_coefficient=self.balance_coefficient,
            placement=self.placement,
            use_shared=self.use_shared,
            use_separate=self.use_separate,
            gate_weighting=self.gate_weighting,
            route_cls=self.route_cls,
            msa_rank=self.shared_rank,
        )


_TUPLE_INT = {"adapted_blocks", "separate_ranks"}
_TUPLE_FLOAT = {"separate_alphas"}
_OPTIONAL_FLOAT = {"shared_alpha"}
_OPTIONAL_INT = {"backbone_seed"}
_OPTIONAL_STR = {"backbone_archive", "corpus", "out"}


def config_to_text(config: RunConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if value is None:
            text = "none"
        elif isinstance(value, (tuple, list)):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def _parse_value(key: str, text: str, kind):
    text = text.strip()
    if key in _TUPLE_INT | _TUPLE_FLOAT | _OPTIONAL_FLOAT | _OPTIONAL_INT | _OPTIONAL_STR:
        if text.lower() == "none":
            return None
        if key in _TUPLE_INT:
            return tuple(int(v) for v in text.split(",") if v != "")
        if key in _TUPLE_FLOAT:
            return tuple(float(v) for v in text.split(",") if v != "")
        if key in _OPTIONAL_FLOAT:
            return float(text)
        if key in _OPTIONAL_INT:
            return int(text)
        return text
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {text!r}")
    return kind(text)


_FIELD_TYPES = {"preset": str, "adapted_last": int, "shared_rank": int,
                "balance_coefficient": float, "placement": str, "use_shared": bool,
                "use_separate": bool, "gate_weighting": str, "route_cls": bool,
                "head_input": str, "init_mode": str, "lr": float, "beta1": float,
                "beta2": float, "adam_eps": float, "weight_decay": float,
                "batch_size": int, "steps": int, "seed": int, "augment_p": float,
                "blur_max": float, "jpeg_min": int, "jpeg_max": int,
                "normalize_mean": float, "normalize_std": float, "log_every": int}


def config_from_lines(lines, base: RunConfig | None = None) -> RunConfig:
    """Line-oriented key=value parsing, '#' comments allowed."""
    values = {}
    known = {f.name for f in fields(RunConfig)}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {raw!r} is not key=value")
        key, text = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, text, _FIELD_TYPES.get(key, str))
    return replace(base or RunConfig(), **values)


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    with open(path) as f:
        return config_from_lines(f.readlines(), base)


def toy_reference_config(corpus_root: str | None = None, **overrides) -> RunConfig:
    """Pinned desk-scale benchmark: toy-64 backbone, last two blocks adapted."""
    base = RunConfig(preset="toy-64", adapted_last=2, steps=1200, batch_size=32,
                     seed=7, lr=6e-4, augment_p=0.1, corpus=corpus_root, log_every=50)
    return replace(base, **overrides) if overrides else base


# model assembly -------------------------------------------------------

class MoleModel:
    """Frozen backbone + expert attachment + classifier head."""

    def __init__(self, config: RunConfig):
        self.run_config = config
        self.vit_config = config.vit_config()
        seed = config.seed
        backbone_seed = config.backbone_seed if config.backbone_seed is not None else seed
        if config.backbone_archive:
            self.backbone = load_backbone(config.backbone_archive, self.vit_config)
        else:
            self.backbone = vit.build_backbone(self.vit_config, backbone_seed)
        self.mole_config = config.mole_config(self.vit_config)
        self.attachment = vit.MoleAttachment(self.vit_config, self.mole_config, seed)
        self.head = mole.make_head(self.vit_config.feature_dim, seed)
        if config.init_mode == "collapse":
            self._collapse_init(seed)
        elif config.init_mode != "standard":
            raise ValueError(f"unknown init mode {config.init_mode!r}")

    def _collapse_init(self, seed: int) -> None:
        # Expert 0 gets a usable nonzero B; the router part of the collapse
        # init needs data statistics and happens in train() (saturated gates
        # pinned to expert 0, see apply_collapse_init).
        for i, layer in self.attachment.mlp_layers.items():
            if layer.separate:
                first = layer.separate[0]
                first.B.data[:] = rng.gaussian(seed, first.B.shape, 0.02,
                                               "collapse", f"block{i}")

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = self.attachment.named_parameters()
        params["head.weight"] = self.head.weight
        params["head.bias"] = self.head.bias
        return params

    def normalize(self, images01: np.ndarray) -> np.ndarray:
        cfg = self.run_config
        return (np.asarray(images01, dtype=np.float64) - cfg.normalize_mean) / cfg.normalize_std

    def forward(self, images01: np.ndarray):
        """[B, C, H, W] images in [0, 1] -> (logits [B], routing stats)."""
        feats, stats = vit.vit_forward(self.vit_config, self.backbone,
                                       self.normalize(images01), self.attachment)
        return mole.head_logits(self.head, feats), stats

    def scores(self, images01: np.ndarray) -> np.ndarray:
        with T.no_grad():
            logits, _ = self.forward(images01)
        from scipy.special import expit
        return expit(logits.data)

    def load_trainable(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.trainable_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise T.ShapeError(
                    f"checkpoint parameter {name}: shape {arr.shape} vs model {p.data.shape}")
            p.data[...] = arr


def save_backbone(weights: vit.BackboneWeights, path: str, dtype=np.float64) -> None:
    """Backbone into a tensor archive (sorted names for stable files)."""
    entries = {name: weights.params[name].data.astype(dtype)
               for name in sorted(weights.params)}
    archive.write_archive(path, entries)


def save_model_archive(model: MoleModel, path: str, dtype=np.float64) -> None:
    """Whole model in one archive: backbone.*, mole.*, and head.* entries."""
    entries = {name: p.data for name, p in model.backbone.params.items()}
    entries.update({name: p.data for name, p in model.trainable_parameters().items()})
    archive.write_archive(path, {name: entries[name].astype(dtype)
                                 for name in sorted(entries)})


def load_backbone(path: str, config: vit.ViTConfig) -> vit.BackboneWeights:
    """Backbone from a tensor archive, with shape validation and widening."""
    arrays = archive.load_f64(path)
    include_proj = config.projection_dim is not None and "backbone.proj" in arrays
    shapes = vit.parameter_shapes(config, include_projection=include_proj)
    params = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing backbone tensor {name}")
        arr = arrays[name]
        if arr.shape != shape:
            raise T.ShapeError(f"{path}: tensor {name} has shape {arr.shape}, expected {shape}")
        params[name] = Tensor(arr)
    return vit.BackboneWeights(config, params)


# checkpointing --------------------------------------------------------

@dataclass
class Checkpoint:
    config: RunConfig
    step: int
    params: dict[str, np.ndarray]
    optim_state: dict[str, np.ndarray] = field(default_factory=dict)

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        archive.write_archive(os.path.join(directory, "weights.arc"),
                              {k: self.params[k] for k in sorted(self.params)})
        archive.write_archive(os.path.join(directory, "optim.arc"),
                              {k: self.optim_state[k] for k in sorted(self.optim_state)})
        with open(os.path.join(directory, "config.cfg"), "w") as f:
            f.write(config_to_text(self.config))
            f.write(f"# trained_steps={self.step}\n")

    @classmethod
    def load(cls, directory: str) -> "Checkpoint":
        step = 0
        path = os.path.join(directory, "config.cfg")
        plain_lines = []
        with open(path) as f:
            for line in f:
                if line.startswith("# trained_steps="):
                    step = int(line.split("=", 1)[1])
                else:
                    plain_lines.append(line)
        config = config_from_lines(plain_lines)
        params = archive.load_f64(os.path.join(directory, "weights.arc"))
        optim_state = archive.load_f64(os.path.join(directory, "optim.arc"))
        return cls(config=config, step=step, params=params, optim_state=optim_state)


# training loop ---------------------------------------------------------

def _mlp_input_features(model: MoleModel, images01: np.ndarray, blocks) -> dict:
    """Pre-routing MLP-input token features per requested block."""
    config = model.vit_config
    weights = model.backbone
    wanted = set(blocks)
    out: dict[int, np.ndarray] = {}
    with T.no_grad():
        x = vit.patchify(config, weights, model.normalize(images01))
        batch, tokens, d = x.shape
        x = T.layer_norm(x, weights["backbone.ln_pre.gain"], weights["backbone.ln_pre.bias"],
                         config.ln_eps)
        for i in range(config.depth):
            block = f"backbone.block{i}"
            attn_in = T.layer_norm(x, weights[f"{block}.ln1.gain"],
                                   weights[f"{block}.ln1.bias"], config.ln_eps)
            x = x + vit._attention(attn_in, weights, block, config,
                                   model.attachment.msa_experts.get(i))
            mlp_in = T.layer_norm(x, weights[f"{block}.ln2.gain"],
                                  weights[f"{block}.ln2.bias"], config.ln_eps)
            if i in wanted:
                out[i] = mlp_in.data.reshape(batch * tokens, d).copy()

            def frozen_mlp(t, _block=block):
                hidden = vit._activate(vit._linear(t, weights, f"{_block}.mlp.fc1"), config)
                return vit._linear(hidden, weights, f"{_block}.mlp.fc2")

            layer = model.attachment.mlp_layers.get(i)
            if layer is None:
                x = x + frozen_mlp(mlp_in)
            else:
                flat = T.reshape(mlp_in, (batch * tokens, d))
                h, _ = mole.mole_mlp_forward(flat, frozen_mlp, layer)
                x = x + T.reshape(h, (batch, tokens, d))
    return out


def apply_collapse_init(model: MoleModel, corpus: forge.Corpus,
                        probe_size: int = 128, gain: float = 40.0) -> None:
    """Adversarial router init: saturate every gate onto expert 0.

    Router rows are +-gain-scaled copies of the mean feature direction, so
    expert 0's logit dominates by tens of nats on essentially every token.
    The softmax is then saturated and passes no usable gradient, which is
    exactly the self-trapping collapse the balance loss exists to prevent.
    """
    blocks = [i for i, layer in model.attachment.mlp_layers.items() if layer.separate]
    if not blocks:
        return
    probe = corpus.gather(list(range(min(probe_size, len(corpus)))))
    features = _mlp_input_features(model, probe.images, blocks)
    for i in blocks:
        layer = model.attachment.mlp_layers[i]
        mu = features[i].mean(axis=0)
        strengths = features[i] @ mu
        scale = gain / max(float(np.median(strengths)), 1e-9)
        w = np.tile(-scale * mu, (len(layer.separate), 1))
        w[0] = scale * mu
        layer.router.W.data[:] = w


def _balanced_indices(corpus: forge.Corpus, batch_size: int,
                      gen: np.random.Generator) -> list[int]:
    real = np.flatnonzero(corpus.labels == 0)
    fake = np.flatnonzero(corpus.labels == 1)
    n_fake = batch_size // 2
    n_real = batch_size - n_fake
    pick_real = gen.choice(real, size=n_real, replace=len(real) < n_real)
    pick_fake = gen.choice(fake, size=n_fake, replace=len(fake) < n_fake)
    return list(pick_real) + list(pick_fake)


def train(config: RunConfig, train_corpus: forge.Corpus,
          start: Checkpoint | None = None):
    """Run the step budget; returns (checkpoint, log rows)."""
    labels = train_corpus.labels
    if len(train_corpus) == 0 or labels.min() == labels.max():
        raise ValueError("training corpus must contain both classes")

    model = MoleModel(config)
    if config.init_mode == "collapse" and start is None:
        apply_collapse_init(model, train_corpus)
    params = model.trainable_parameters()
    optimizer = AdamW(params, lr=config.lr, betas=(config.beta1, config.beta2),
                      eps=config.adam_eps, weight_decay=config.weight_decay)
    start_step = 0
    if start is not None:
        model.load_trainable(start.params)
        if start.optim_state:
            optimizer.load_state_arrays(start.optim_state)
        start_step = start.step

    n_experts = model.mole_config.num_experts
    coefficient = config.balance_coefficient
    log: list[dict] = []
    for step in range(start_step, config.steps):
        batch = train_corpus.gather(
            _balanced_indices(train_corpus, config.batch_size,
                              rng.stream(config.seed, "batch", step)))
        if config.augment_p > 0:
            batch = forge.augment(batch, config.augment_p,
                                  rng.stream(config.seed, "augment", step),
                                  sigma_range=(0.0, config.blur_max),
                                  quality_range=(config.jpeg_min, config.jpeg_max))
        logits, stats = model.forward(batch.images)
        bce = metrics.bce_loss(logits, batch.labels.astype(np.float64), from_logits=True)
        balance_terms = [mole.load_balance_loss(s, n_experts) for _, s in stats]
        loss = mole.total_loss(bce, balance_terms, coefficient)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        row = {"step": step, "bce": float(bce.data), "loss": float(loss.data)}
        for (block, s), term in zip(stats, balance_terms):
            row[f"lb_block{block}"] = float(term.data)
            row[f"max_f_block{block}"] = float(s.dispatch_fraction.max())
            for j, fraction in enumerate(s.dispatch_fraction):
                row[f"f_block{block}_e{j}"] = float(fraction)
        log.append(row)
        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            balance = " ".join(f"f{block}={s.dispatch_fraction.max():.2f}"
                               for block, s in stats)
            print(f"step {step:5d}  bce {row['bce']:.4f}  loss {row['loss']:.4f}  {balance}",
                  flush=True)

    checkpoint = Checkpoint(
        config=config, step=config.steps,
        params={k: p.data.copy() for k, p in params.items()},
        optim_state={k: v.copy() for k, v in optimizer.state_arrays().items()})
    return checkpoint, log


def log_to_csv(log: list[dict]) -> str:
    if not log:
        return ""
    keys = sorted({k for row in log for k in row}, key=lambda k: (k != "step", k))
    lines = [",".join(keys)]
    for row in log:
        lines.append(",".join(str(row.get(k, "")) for k in keys))
    return "\n".join(lines) + "\n"


def routing_fractions(model: MoleModel, corpus: forge.Corpus,
                      batch_size: int = 64) -> dict[int, np.ndarray]:
    """Dispatch fractions f_j per adapted block over a whole split."""
    totals: dict[int, np.ndarray] = {}
    count = 0
    with T.no_grad():
        for lo in range(0, len(corpus), batch_size):
            idx = list(range(lo, min(lo + batch_size, len(corpus))))
            batch = corpus.gather(idx)
            _, stats = model.forward(batch.images)
            for block, s in stats:
                add = s.dispatch_fraction * s.token_count
                totals[block] = totals.get(block, 0) + add
            count += 1
    return {b: v / v.sum() for b, v in totals.items()}


# evaluation ------------------------------------------------------------

def apply_perturbation(images: np.ndarray, perturbation) -> np.ndarray:
    """('blur', sigma) or ('jpeg', quality) on a [B, C, H, W] stack."""
    if perturbation is None:
        return images
    kind, level = perturbation
    if kind == "blur":
        return forge.gaussian_blur(images, float(level))
    if kind == "jpeg":
        return np.stack([forge.jpeg_like(img, int(level)) for img in images])
    raise ValueError(f"unknown perturbation {kind!r}")


def score_split(model: MoleModel, corpus: forge.Corpus, perturbation=None,
                batch_size: int = 64) -> np.ndarray:
    scores = np.zeros(len(corpus))
    for lo in range(0, len(corpus), batch_size):
        idx = list(range(lo, min(lo + batch_size, len(corpus))))
        batch = corpus.gather(idx)
        images = apply_perturbation(batch.images, perturbation)
        scores[lo:lo + len(idx)] = model.scores(images)
    return scores


def model_from_checkpoint(checkpoint: Checkpoint) -> MoleModel:
    model = MoleModel(checkpoint.config)
    model.load_trainable(checkpoint.params)
    return model


def evaluate(checkpoint: Checkpoint, eval_corpus: forge.Corpus,
             val_corpus: forge.Corpus | None = None, perturbation=None,
             threshold: float | None = None, batch_size: int = 64) -> metrics.MetricsReport:
    """Per-generator AP and accuracy, threshold tuned on the validation split."""
    model = model_from_checkpoint(checkpoint)
    if threshold is None:
        if val_corpus is None:
            raise ValueError("threshold tuning requested but no validation split given")
        val_scores = score_split(model, val_corpus, None, batch_size)
        threshold = metrics.tune_threshold(
            metrics.ScoredSet(val_scores, val_corpus.labels))
    scores = score_split(model, eval_corpus, perturbation, batch_size)
    labels = eval_corpus.labels
    gen_ids = np.array([it.generator_id for it in eval_corpus.items])
    real_mask = labels == 0

    report = metrics.MetricsReport(threshold=threshold,
                                   perturbation="none" if perturbation is None
                                   else f"{perturbation[0]}:{perturbation[1]}")
    for gid in eval_corpus.generator_ids():
        mask = real_mask | (gen_ids == gid)
        subset = metrics.ScoredSet(scores[mask], labels[mask])
        ap = metrics.average_precision(subset)
        acc_real, acc_fake, acc = metrics.class_accuracies(subset, threshold)
        report.rows.append(metrics.GeneratorMetrics(
            generator_id=gid, n_real=int(real_mask.sum()), n_fake=int((gen_ids == gid).sum()),
            ap=ap, acc=acc, acc_real=acc_real, acc_fake=acc_fake))
    return report


BLUR_LEVELS = (1.0, 2.0, 3.0, 4.0)
JPEG_LEVELS = (90, 80, 70, 60, 50, 40, 30)


def robustness_sweep(checkpoint: Checkpoint, eval_corpus: forge.Corpus,
                     val_corpus: forge.Corpus | None = None,
                     threshold: float | None = None) -> list[tuple[str, metrics.MetricsReport]]:
    """The eleven perturbed evaluations: blur sigma 1..4, jpeg quality 90..30."""
    rows = []
    for sigma in BLUR_LEVELS:
        report = evaluate(checkpoint, eval_corpus, val_corpus, ("blur", sigma), threshold)
        rows.append((f"blur:{sigma:g}", report))
        threshold = report.threshold  # tune once, reuse
    for quality in JPEG_LEVELS:
        report = evaluate(checkpoint, eval_corpus, val_corpus, ("jpeg", quality), threshold)
        rows.append((f"jpeg:{quality}", report))
    return rows


def sweep_to_tsv(rows: list[tuple[str, metrics.MetricsReport]]) -> str:
    lines = ["perturbation\tmAP\tmean_acc"]
    for label, report in rows:
        lines.append(f"{label}\t{report.mean_ap:.4f}\t{report.mean_acc:.4f}")
    return "\n".join(lines) + "\n"


# ablation grids ----------------------------------------------------------

def _block_axis(config: RunConfig) -> list[tuple[str, RunConfig]]:
    depth = config.vit_config().depth
    rows = [("none", replace(config, adapted_blocks=None, adapted_last=0))]
    for k in range(1, min(5, depth) + 1):
        rows.append((f"last{k}", replace(config, adapted_blocks=None, adapted_last=k)))
    rows.append(("all", replace(config, adapted_blocks=None, adapted_last=depth)))
    return rows


def _placement_axis(config: RunConfig) -> list[tuple[str, RunConfig]]:
    return [
        ("(a) msa", replace(config, placement="msa", use_shared=True, use_separate=False)),
        ("(b) mlp shared-only", replace(config, placement="mlp", use_shared=True,
                                        use_separate=False)),
        ("(c) msa+mlp", replace(config, placement="both", use_shared=True,
                                use_separate=False)),
        ("(d) mlp separate-only", replace(config, placement="mlp", use_shared=False,
                                          use_separate=True)),
        ("(e) full", replace(config, placement="mlp", use_shared=True, use_separate=True)),
    ]


RANK_GRID = [
    (4, (4, 8, 16)),
    (8, (4, 8, 16)),
    (16, (4, 8, 16)),
    (8, (8, 16, 32)),
    (8, (4, 4, 4)),
    (8, (8, 8, 8)),
    (8, (8, 8, 8, 8)),
    (8, (4, 8, 16, 32)),
]


def _rank_axis(config: RunConfig) -> list[tuple[str, RunConfig]]:
    rows = []
    for shared, separate in RANK_GRID:
        label = f"shared{shared}+" + "/".join(str(r) for r in separate)
        rows.append((label, replace(config, shared_rank=shared, separate_ranks=separate)))
    return rows


DATA_SIZES = (2000, 8000, 20000)


def _subsample(corpus: forge.Corpus, size: int, seed: int) -> forge.Corpus:
    if size >= len(corpus):
        return corpus
    real = np.flatnonzero(corpus.labels == 0)
    fake = np.flatnonzero(corpus.labels == 1)
    gen = rng.stream(seed, "datasize", size)
    half = size // 2
    keep = np.concatenate([gen.choice(real, size=size - half, replace=False),
                           gen.choice(fake, size=half, replace=False)])
    keep = np.sort(keep)
    return forge.Corpus([corpus.items[i] for i in keep],
                        [corpus._pixels[i] for i in keep])


def ablate(config: RunConfig, axis: str, corpora: dict[str, forge.Corpus] | None = None,
           dry_run: bool = False) -> list[dict]:
    """Execute (or just enumerate) one ablation axis.

    Returns one row per variant with the trainable-parameter column always
    filled; AP/accuracy appear when the grid actually runs.
    """
    if axis == "blocks":
        grid = _block_axis(config)
    elif axis == "placement":
        grid = _placement_axis(config)
    elif axis == "ranks":
        grid = _rank_axis(config)
    elif axis == "data-size":
        grid = [(f"{n}", config) for n in DATA_SIZES]
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; "
                         "choose blocks, placement, ranks, or data-size")

    rows = []
    for label, variant in grid:
        vit_cfg = variant.vit_config()
        counts = vit.count_trainable(vit_cfg, variant.mole_config(vit_cfg))
        row = {"variant": label, "trainable": counts["trainable_count"],
               "percentage": counts["percentage"]}
        if not dry_run:
            if corpora is None:
                raise ValueError("ablate needs corpora unless dry_run=True")
            train_corpus = corpora["train"]
            if axis == "data-size":
                train_corpus = _subsample(train_corpus, int(label), variant.seed)
            ckpt, _ = train(variant, train_corpus)
            report = evaluate(ckpt, corpora["test"], corpora.get("val"))
            row["test_mAP"] = report.mean_ap
            row["test_acc"] = report.mean_acc
        rows.append(row)
    return rows


def ablation_to_tsv(rows: list[dict]) -> str:
    keys = ["variant", "trainable", "percentage"] + \
        [k for k in ("test_mAP", "test_acc") if rows and k in rows[0]]
    lines = ["\t".join(keys)]
    for row in rows:
        cells = []
        for k in keys:
            v = row[k]
            cells.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


# parameter report (the published per-block percentages) -------------------

PARAMS_TABLE_ROWS = {
    "b32": ("none", "last1", "last2", "last3", "last4", "last5", "all"),
    "l14": ("last2", "last3", "last4", "last6"),
}


def params_report(presets=("b32", "l14"), mole_defaults: mole.MoleConfig | None = None) -> list[dict]:
    rows = []
    for name in presets:
        config = vit.preset(name)
        for variant in PARAMS_TABLE_ROWS.get(name, ("last3",)):
            if variant == "none":
                blocks: tuple = ()
            elif variant == "all":
                blocks = tuple(range(config.depth))
            else:
                blocks = vit.last_blocks(config, int(variant.removeprefix("last")))
            base = mole_defaults or mole.MoleConfig()
            counts = vit.count_trainable(config, replace(base, adapted_blocks=blocks))
            rows.append({"backbone": name, "blocks": variant,
                         "trainable": counts["trainable_count"],
                         "total": counts["total_count"],
                         "percentage": counts["percentage"]})
    return rows


def params_report_tsv(rows: list[dict]) -> str:
    lines = ["backbone\tblocks\ttrainable\ttotal\tpercentage"]
    for row in rows:
        lines.append(f"{row['backbone']}\t{row['blocks']}\t{row['trainable']}\t"
                     f"{row['total']}\t{row['percentage']:.3f}%")
    return "\n".join(lines) + "\n"


# expert feature export ----------------------------------------------------

def export_features(checkpoint: Checkpoint, corpus: forge.Corpus, blocks,
                    out_path: str, batch_size: int = 64) -> int:
    """CSV of per-expert class-token features: one row per (image, block, expert).

    Each feature is frozen_mlp(x) + expert_j(x) at the class-token row of
    the requested block, mirroring how the per-expert feature spaces are
    inspected. Returns the number of data rows written.
    """
    model = model_from_checkpoint(checkpoint)
    blocks = tuple(int(b) for b in blocks)
    for b in blocks:
        if b not in model.attachment.mlp_layers:
            raise ValueError(f"block {b} carries no adapter; adapted: "
                             f"{sorted(model.attachment.mlp_layers)}")
    d = model.vit_config.embed_dim
    rows_written = 0
    with open(out_path, "w") as f:
        f.write("path,label,block,expert," + ",".join(f"f{i}" for i in range(d)) + "\n")
        with T.no_grad():
            for lo in range(0, len(corpus), batch_size):
                idx = list(range(lo, min(lo + batch_size, len(corpus))))
                batch = corpus.gather(idx)
                captures = _expert_cls_features(model, batch.images, blocks)
                for row_i, item_i in enumerate(idx):
                    item = corpus.items[item_i]
                    for b in blocks:
                        for j in range(len(model.attachment.mlp_layers[b].separate)):
                            vec = captures[(b, j)][row_i]
                            f.write(f"{os.path.basename(item.path)},{item.label},{b},{j},")
                            f.write(",".join(f"{v:.8g}" for v in vec) + "\n")
                            rows_written += 1
    return rows_written


def _expert_cls_features(model: MoleModel, images01: np.ndarray, blocks) -> dict:
    """Replays the backbone pass, capturing frozen+expert MLP output at CLS."""
    config = model.vit_config
    weights = model.backbone
    x = vit.patchify(config, weights, model.normalize(images01))
    batch, tokens, d = x.shape
    x = T.layer_norm(x, weights["backbone.ln_pre.gain"], weights["backbone.ln_pre.bias"],
                     config.ln_eps)
    captures: dict[tuple[int, int], np.ndarray] = {}
    for i in range(config.depth):
        block = f"backbone.block{i}"
        attn_in = T.layer_norm(x, weights[f"{block}.ln1.gain"], weights[f"{block}.ln1.bias"],
                               config.ln_eps)
        msa_adapters = model.attachment.msa_experts.get(i)
        x = x + vit._attention(attn_in, weights, block, config, msa_adapters)
        mlp_in = T.layer_norm(x, weights[f"{block}.ln2.gain"], weights[f"{block}.ln2.bias"],
                              config.ln_eps)

        def frozen_mlp(t, _block=block):
            hidden = vit._activate(vit._linear(t, weights, f"{_block}.mlp.fc1"), config)
            return vit._linear(hidden, weights, f"{_block}.mlp.fc2")

        layer = model.attachment.mlp_layers.get(i)
        if layer is None:
            x = x + frozen_mlp(mlp_in)
            continue
        flat = T.reshape(mlp_in, (batch * tokens, d))
        if i in blocks:
            frozen_out = frozen_mlp(flat)
            cls_rows = np.arange(batch) * tokens
            for j, expert in enumerate(layer.separate):
                combined = frozen_out + mole.lora_forward(flat, expert)
                captures[(i, j)] = combined.data[cls_rows]
        h, _ = mole.mole_mlp_forward(
            flat, frozen_mlp, layer,
            route_mask=None if model.mole_config.route_cls else _cls_mask(batch, tokens))
        x = x + T.reshape(h, (batch, tokens, d))
    return captures


def _cls_mask(batch: int, tokens: int) -> np.ndarray:
    mask = np.ones(batch * tokens)
    mask[0::tokens] = 0.0
    return mask
