"""Mixture of low-rank experts: shared + separate LoRA pairs behind a
top-1 softmax router, bypassing a frozen MLP sub-layer.

Per token x the bypass contributes

    (alpha/r) B A x  +  gate_s(x) * (alpha_s/r_s) B_s A_s x

where s is the argmax expert for that token and gate_s its softmax
probability, so the router receives gradient through the gate factor.
The always-on term is the shared adapter; exactly one separate expert
fires per token.

The dispatch statistics feed the load-balancing penalty
N * sum_j f_j P_j: f_j is the hard fraction of tokens routed to expert j
(piecewise constant), P_j the mean gate probability (differentiable).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from . import tensor as T
from .tensor import Tensor


@dataclass
class LoraExpert:
    """Low-rank pair B [d x r], A [r x d] with effective multiplier alpha/r."""

    A: Tensor
    B: Tensor
    rank: int
    alpha: float

    @property
    def dim(self) -> int:
        return self.A.shape[1]


def make_expert(dim: int, rank: int, alpha: float | None = None,
                seed: int = 0, *tags) -> LoraExpert:
    """A ~ Gaussian(0, 1/d), B = 0, so the expert starts contributing nothing."""
    if rank < 1 or rank >= dim:
        raise ValueError(f"rank must be in [1, dim), got rank={rank} dim={dim}")
    a = rng.gaussian(seed, (rank, dim), dim ** -0.5, *tags, "A")
    return LoraExpert(A=Tensor(a, requires_grad=True),
                      B=Tensor(np.zeros((dim, rank)), requires_grad=True),
                      rank=rank,
                      alpha=float(rank if alpha is None else alpha))


def lora_forward(x: Tensor, expert: LoraExpert) -> Tensor:
    """(alpha/r) x A^T B^T for token rows x [..., d]."""
    x = T.as_tensor(x)
    if x.shape[-1] != expert.dim:
        raise T.ShapeError(
            f"lora_forward: input dim {x.shape[-1]} does not match expert dim {expert.dim}")
    down = T.matmul(x, T.transpose(expert.A))
    up = T.matmul(down, T.transpose(expert.B))
    return T.scale(up, expert.alpha / expert.rank)


@dataclass
class Router:
    """Linear gate W_g [N x d]; softmax over experts per token."""

    W: Tensor

    @property
    def num_experts(self) -> int:
        return self.W.shape[0]


def make_router(dim: int, num_experts: int, seed: int = 0, *tags) -> Router:
    # Zero init: uniform gates, ties resolve to expert 0 until training moves W.
    del seed, tags
    return Router(W=Tensor(np.zeros((num_experts, dim)), requires_grad=True))


def route(x: Tensor, router: Router):
    """Top-1 dispatch.

    Returns (argmax index per token, gate probability of that expert as a
    differentiable tensor, full gate matrix G [T x N]). Ties take the
    lowest expert index.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != router.W.shape[1]:
        raise T.ShapeError(
            f"route: input dim {x.shape[-1]} does not match router dim {router.W.shape[1]}")
    logits = T.matmul(x, T.transpose(router.W))
    gates = T.softmax(logits, axis=-1)
    indices = np.argmax(gates.data, axis=-1)
    onehot = np.zeros_like(gates.data)
    onehot[np.arange(len(indices)), indices] = 1.0
    selected_gate = (gates * onehot).sum(axis=-1)
    return indices, selected_gate, gates


@dataclass
class RoutingStats:
    """Per-layer dispatch record for one forward pass."""

    dispatch_fraction: np.ndarray   # f_j, hard argmax counts / T
    mean_gate: Tensor               # P_j, differentiable
    token_count: int
    assignments: np.ndarray         # argmax index per token


@dataclass
class MoleLayer:
    shared: LoraExpert | None
    separate: list[LoraExpert] = field(default_factory=list)
    router: Router | None = None
    gate_weighting: str = "probability"   # probability | unit

    def __post_init__(self):
        if self.separate and self.router is None:
            raise ValueError("separate experts need a router")
        if self.router is not None and self.router.num_experts != len(self.separate):
            raise ValueError(
                f"router expects {self.router.num_experts} experts, got {len(self.separate)}")


def make_mole_layer(dim: int, shared_rank: int = 8, separate_ranks=(4, 8, 16),
                    shared_alpha: float | None = None, separate_alphas=None,
                    use_shared: bool = True, use_separate: bool = True,
                    gate_weighting: str = "probability",
                    seed: int = 0, *tags) -> MoleLayer:
    shared = make_expert(dim, shared_rank, shared_alpha, seed, *tags, "shared") if use_shared else None
    separate = []
    router = None
    if use_separate:
        alphas = separate_alphas or [None] * len(separate_ranks)
        separate = [make_expert(dim, r, a, seed, *tags, f"expert{j}")
                    for j, (r, a) in enumerate(zip(separate_ranks, alphas))]
        router = make_router(dim, len(separate), seed, *tags)
    return MoleLayer(shared=shared, separate=separate, router=router,
                     gate_weighting=gate_weighting)


def mole_mlp_forward(x: Tensor, frozen_mlp, layer: MoleLayer,
                     route_mask: np.ndarray | None = None):
    """Frozen MLP output plus the expert bypass.

    ``x`` is [T x d] token rows; ``frozen_mlp`` maps [T x d] -> [T x d].
    ``route_mask`` (optional, [T] of {0,1}) excludes tokens from the
    separate mixture and its statistics, e.g. to keep the CLS token out.
    Returns (h, RoutingStats or None when the layer has no router).
    """
    x = T.as_tensor(x)
    h = frozen_mlp(x)
    if layer.shared is not None:
        h = h + lora_forward(x, layer.shared)
    if not layer.separate:
        return h, None

    indices, selected_gate, gates = route(x, layer.router)
    n_experts = len(layer.separate)
    if route_mask is None:
        active = np.ones(len(indices), dtype=np.float64)
    else:
        active = np.asarray(route_mask, dtype=np.float64)
    token_count = int(active.sum())
    if token_count == 0:
        raise ValueError("mole_mlp_forward: route_mask excludes every token")

    if layer.gate_weighting == "probability":
        weight = selected_gate * active
    elif layer.gate_weighting == "unit":
        weight = Tensor(active)
    else:
        raise ValueError(f"unknown gate weighting {layer.gate_weighting!r}")

    mixture = None
    for j, expert in enumerate(layer.separate):
        mask_j = (indices == j).astype(np.float64)
        if not mask_j.any():
            continue
        coeff = weight * mask_j
        term = lora_forward(x, expert) * T.reshape(coeff, (-1, 1))
        mixture = term if mixture is None else mixture + term
    if mixture is not None:
        h = h + mixture

    keep = active > 0
    counts = np.bincount(indices[keep], minlength=n_experts).astype(np.float64)
    fractions = counts / token_count
    mean_gate = (gates * T.reshape(Tensor(active), (-1, 1))).sum(axis=0) * (1.0 / token_count)
    stats = RoutingStats(dispatch_fraction=fractions, mean_gate=mean_gate,
                         token_count=token_count, assignments=indices)
    return h, stats


def load_balance_loss(stats: RoutingStats, num_experts: int) -> Tensor:
    """N * sum_j f_j P_j, differentiable through the mean gate."""
    if stats.token_count <= 0:
        raise ValueError("load_balance_loss needs statistics over at least one token")
    if len(stats.dispatch_fraction) != num_experts:
        raise ValueError(
            f"stats cover {len(stats.dispatch_fraction)} experts, expected {num_experts}")
    weighted = stats.mean_gate * stats.dispatch_fraction
    return weighted.sum() * float(num_experts)


def total_loss(bce, balance_terms, coefficient: float) -> Tensor:
    """bce + coefficient * sum of per-block balance losses."""
    if coefficient < 0:
        raise ValueError(f"balance coefficient must be >= 0, got {coefficient}")
    total = T.as_tensor(bce)
    for term in balance_terms:
        total = total + T.scale(term, coefficient)
    return total


@dataclass(frozen=True)
class MoleConfig:
    """Adapter hyperparameters: which blocks, which experts, how weighted."""

    adapted_blocks: tuple = ()
    shared_rank: int = 8
    separate_ranks: tuple = (4, 8, 16)
    shared_alpha: float | None = None
    separate_alphas: tuple | None = None
    balance_coefficient: float = 0.01
    placement: str = "mlp"            # mlp | msa | both
    use_shared: bool = True
    use_separate: bool = True
    gate_weighting: str = "probability"
    route_cls: bool = True
    msa_rank: int = 8

    @property
    def num_experts(self) -> int:
        return len(self.separate_ranks)

    def __post_init__(self):
        if self.placement not in ("mlp", "msa", "both"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.balance_coefficient < 0:
            raise ValueError("balance coefficient must be >= 0")
        if not (self.use_shared or self.use_separate) and self.placement in ("mlp", "both"):
            raise ValueError("an MLP adapter needs the shared path, the mixture, or both")


@dataclass
class ClassifierHead:
    """Single linear unit on the backbone feature; sigmoid applied by the caller."""

    weight: Tensor    # [d]
    bias: Tensor      # [1]

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


def make_head(dim: int, seed: int = 0, *tags) -> ClassifierHead:
    w = rng.gaussian(seed, (dim,), dim ** -0.5, *tags, "head.weight")
    return ClassifierHead(weight=Tensor(w, requires_grad=True),
                          bias=Tensor(np.zeros(1), requires_grad=True))


def head_logits(head: ClassifierHead, features: Tensor) -> Tensor:
    """[B x d] features -> [B] logits."""
    out = T.matmul(features, T.reshape(head.weight, (-1, 1)))
    return T.reshape(out, (-1,)) + head.bias
