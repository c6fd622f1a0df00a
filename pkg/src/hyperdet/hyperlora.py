"""Hypernetwork that emits low-rank adapter weights for every (expert, layer, position).

A single generator ``h(t_i, l_j, p_k) -> (A, B)`` is shared by all experts; the
experts differ only in their task embedding row ``t_i``.  Blocks are indexed by
their position in the backbone (0-based), experts and MLP positions 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError, UnknownExpertError, UnknownSiteError

N_EXPERTS = 6
ORIGINAL_EXPERT = 6
POSITIONS = (1, 2)


@dataclass
class LoRAWeights:
    site: tuple
    expert: int
    A: torch.Tensor  # d_out x r
    B: torch.Tensor  # r x d_in

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def delta(self) -> torch.Tensor:
        return self.A @ self.B


class EmbeddingTables(nn.Module):
    def __init__(self, n_tasks: int, n_layers: int, n_positions: int, dim: int):
        super().__init__()
        self.dim = dim
        self.task = nn.Parameter(torch.randn(n_tasks, dim))
        self.layer = nn.Parameter(torch.randn(n_layers, dim))
        self.position = nn.Parameter(torch.randn(n_positions, dim))


class HyperNetwork(nn.Module):
    """Generates LoRA pairs from concatenated task/layer/position embeddings.

    ``site_shapes`` maps MLP position k to the (d_out, d_in) of the frozen linear
    there; ``layers`` lists the backbone blocks that receive adapters, in the
    order of the layer-embedding rows.
    """

    def __init__(
        self,
        layers,
        site_shapes: dict,
        rank: int,
        embed_dim: int = 64,
        hidden_dim: int = 128,
        n_tasks: int = N_EXPERTS,
        affine: bool = False,
        freeze_embeddings: bool = False,
        scale: float = 1.0,
        init_std: float = 0.02,
    ):
        super().__init__()
        self.layers = tuple(int(j) for j in layers)
        self.positions = tuple(sorted(int(k) for k in site_shapes))
        self.site_shapes = {int(k): tuple(v) for k, v in site_shapes.items()}
        self.rank = int(rank)
        self.n_tasks = int(n_tasks)
        self.affine = affine
        self.scale = float(scale)
        for k, (d_out, d_in) in self.site_shapes.items():
            if self.rank < 1 or 2 * self.rank > min(d_out, d_in):
                raise ConfigError(
                    f"rank={rank}: must satisfy 1 <= rank <= min(d_out, d_in)/2 = {min(d_out, d_in) // 2}"
                    f" for position {k} ({d_out}x{d_in})"
                )
        self.tables = EmbeddingTables(self.n_tasks, len(self.layers), max(self.positions), embed_dim)
        if freeze_embeddings:
            self.tables.requires_grad_(False)
        self.combiner = nn.Linear(3 * embed_dim, hidden_dim)
        self.head_A = nn.ModuleDict()
        self.head_B = nn.ModuleDict()
        for k, (d_out, d_in) in self.site_shapes.items():
            a = nn.Linear(hidden_dim, d_out * self.rank)
            b = nn.Linear(hidden_dim, self.rank * d_in)
            nn.init.normal_(a.weight, std=init_std)
            nn.init.zeros_(a.bias)
            nn.init.zeros_(b.weight)
            nn.init.zeros_(b.bias)
            self.head_A[str(k)] = a
            self.head_B[str(k)] = b

    @property
    def sites(self) -> list:
        return [(j, k) for j in self.layers for k in self.positions]

    def _check(self, expert: int, site=None):
        if not 1 <= int(expert) <= self.n_tasks:
            raise UnknownExpertError(f"expert {expert} out of range 1..{self.n_tasks}")
        if site is not None and (site[0] not in self.layers or site[1] not in self.positions):
            raise UnknownSiteError(f"site {tuple(site)} not registered; known sites {self.sites}")

    def _hidden(self, expert: int, layer_rows, pos_rows):
        t = self.tables
        n = len(layer_rows)
        z = torch.cat(
            [
                t.task[expert - 1].expand(n, -1),
                t.layer[layer_rows],
                t.position[pos_rows],
            ],
            dim=1,
        )
        h = self.combiner(z)
        return h if self.affine else torch.tanh(h)

    def generate(self, expert: int, site) -> LoRAWeights:
        j, k = int(site[0]), int(site[1])
        self._check(expert, (j, k))
        return self.generate_all(expert, sites=[(j, k)])[(j, k)]

    def generate_all(self, expert: int, sites=None) -> dict:
        """LoRA pairs for ``expert`` at every registered site (or the given subset)."""
        self._check(expert)
        sites = self.sites if sites is None else [tuple(s) for s in sites]
        for s in sites:
            self._check(expert, s)
        out = {}
        dev = self.tables.task.device
        for k in self.positions:
            ks = [s for s in sites if s[1] == k]
            if not ks:
                continue
            layer_rows = torch.tensor([self.layers.index(j) for j, _ in ks], device=dev)
            pos_rows = torch.full((len(ks),), k - 1, dtype=torch.long, device=dev)
            h = self._hidden(expert, layer_rows, pos_rows)
            d_out, d_in = self.site_shapes[k]
            A = self.head_A[str(k)](h).view(len(ks), d_out, self.rank)
            B = self.head_B[str(k)](h).view(len(ks), self.rank, d_in)
            for n, s in enumerate(ks):
                out[s] = LoRAWeights(s, expert, A[n], B[n])
        return out


def generate_lora(hnet: HyperNetwork, expert: int, site) -> LoRAWeights:
    return hnet.generate(expert, site)


def adapted_forward(x, W, bias, lora: LoRAWeights | None, scale: float = 1.0):
    """Frozen linear plus the low-rank bypass: ``W x + b + scale * A (B x)``.

    ``x`` may be a single vector or a batch with features on the last axis.
    """
    x = torch.as_tensor(x)
    W = torch.as_tensor(W, dtype=x.dtype)
    bias = None if bias is None else torch.as_tensor(bias, dtype=x.dtype)
    d_out, d_in = W.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"input has {x.shape[-1]} features, weight expects {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({d_out},)")
    y = F.linear(x, W, bias)
    if lora is None:
        return y
    A, B = lora.A, lora.B
    if A.shape[0] != d_out or B.shape[1] != d_in or A.shape[1] != B.shape[0]:
        raise ShapeError(
            f"LoRA shapes A{tuple(A.shape)} B{tuple(B.shape)} do not conform to W {d_out}x{d_in}"
        )
    return y + scale * F.linear(F.linear(x, B.to(x.dtype)), A.to(x.dtype))


class LoRALinear(nn.Module):
    """A frozen ``nn.Linear`` that accepts externally generated LoRA weights per call."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.base.requires_grad_(False)

    @property
    def shape(self) -> tuple:
        return tuple(self.base.weight.shape)

    def forward(self, x, lora: LoRAWeights | None = None, scale: float = 1.0):
        return adapted_forward(x, self.base.weight, self.base.bias, lora, scale)
