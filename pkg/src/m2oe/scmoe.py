"""Sparse cross mixture-of-experts fusion block.

Sequence and graph features first attend to each other (queries from one
modality, keys/values from the other). Each modality then concatenates its
own features with the cross-attended ones and routes every real token to the
top-k experts of its own expert bank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateRoutingError, ShapeError, ValidationError
from .nn import INIT_STD, MLP, Module, normal_param
from .rng import RngState
from .tensor import Tensor


# ---------------------------------------------------------------- balancing losses

def load_balance_loss(mass) -> Tensor:
    """Squared distance of each expert's share of routed mass from 1/C."""
    mass = T.as_tensor(mass)
    total = mass.values.sum()
    if not total > 0:
        raise DegenerateRoutingError(f"total routed mass must be positive, got {total}")
    c = mass.shape[-1]
    share = mass / T.sum(mass)
    gap = share - 1.0 / c
    return T.sum(gap * gap)


def coefficient_of_variation(x) -> Tensor:
    """Population standard deviation over mean."""
    x = T.as_tensor(x)
    mu = T.mean(x)
    if not mu.item() > 0:
        raise DegenerateRoutingError(f"mean expert importance must be positive, got {mu.item()}")
    centered = x - mu
    return T.sqrt(T.mean(centered * centered)) / mu


def importance_loss(importance, omega_imp: float) -> Tensor:
    return coefficient_of_variation(importance) * float(omega_imp)


# ---------------------------------------------------------------- routing

@dataclass
class RouterOutput:
    indices: np.ndarray        # (T, k) selected experts, best first
    selected: np.ndarray       # (T, C) bool
    gates: Tensor              # (T, C) softmax over kept logits, zeros elsewhere
    logits: Tensor             # (T, C) noisy (train) or clean (eval) logits
    hard_counts: np.ndarray = field(default=None)  # (C,) tokens choosing each expert

    @property
    def soft_mass(self) -> Tensor:
        """Per-expert sum of gate weights; doubles as per-expert importance."""
        return T.sum(self.gates, axis=0)

    @property
    def top_gates(self) -> np.ndarray:
        return np.take_along_axis(self.gates.values, self.indices, axis=1)


class Router(Module):
    def __init__(self, rng: RngState, n_in: int, experts: int, top_k: int,
                 std: float = INIT_STD):
        if not 1 <= top_k <= experts:
            raise ConfigError(f"top_k={top_k} must lie in [1, experts={experts}]")
        self.w_route = normal_param(rng, (n_in, experts), std)
        self.w_noise = normal_param(rng, (n_in, experts), std)
        self.experts = experts
        self.top_k = top_k

    def __call__(self, x, training: bool, rng: RngState | None) -> RouterOutput:
        return route_tokens(x, self, training, rng)


def select_top_k(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row; equal values go to the lower index."""
    return np.argsort(-logits, axis=-1, kind="stable")[:, :k]


def route_tokens(x, router: Router, training: bool, rng: RngState | None = None) -> RouterOutput:
    x = T.as_tensor(x)
    if not 1 <= router.top_k <= router.experts:
        raise ConfigError(f"top_k={router.top_k} exceeds experts={router.experts}")
    logits = T.matmul(x, router.w_route)
    if training:
        if rng is None:
            raise ConfigError("training-mode routing needs an rng")
        noise = rng.normal(logits.shape)
        logits = logits + T.softplus(T.matmul(x, router.w_noise)) * noise
    idx = select_top_k(logits.values, router.top_k)
    selected = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(selected, idx, True, axis=1)
    gates = T.softmax_masked(logits, selected, axis=-1)
    counts = selected.sum(axis=0)
    return RouterOutput(idx, selected, gates, logits, counts)


# ---------------------------------------------------------------- experts

class ExpertBank(Module):
    """C independent two-layer experts: n_in -> 2d -> d."""

    def __init__(self, rng: RngState, n_in: int, d: int, experts: int, slope: float,
                 std: float = INIT_STD):
        self.experts = [MLP(rng, n_in, 2 * d, d, slope, std) for _ in range(experts)]

    def __len__(self) -> int:
        return len(self.experts)

    def __getitem__(self, j: int) -> MLP:
        return self.experts[j]


def moe_forward(x, routed: RouterOutput, bank: ExpertBank) -> Tensor:
    """Gate-weighted sum of the selected experts; each expert sees only its tokens."""
    x = T.as_tensor(x)
    n_tokens = x.shape[0]
    if routed.selected.shape[1] != len(bank):
        raise ShapeError(f"router scores {routed.selected.shape[1]} experts, bank has {len(bank)}")
    out = None
    for j, expert in enumerate(bank.experts):
        rows = np.flatnonzero(routed.selected[:, j])
        if rows.size == 0:
            continue
        y = expert(T.index(x, rows)) * T.index(routed.gates, (rows[:, None], j))
        part = T.scatter_rows(y, rows, n_tokens)
        out = part if out is None else out + part
    if out is None:
        raise ValidationError("no tokens to route")
    return out


def moe_forward_dense(x, routed: RouterOutput, bank: ExpertBank) -> np.ndarray:
    """Reference: evaluate every expert on every token, weight by the full gate matrix."""
    x = T.as_tensor(x)
    gates = routed.gates.values
    return sum(gates[:, j:j + 1] * bank[j](x).values for j in range(len(bank)))


# ---------------------------------------------------------------- cross attention

class CrossAttention(Module):
    def __init__(self, rng: RngState, d: int, scale: float | None = None, sqrt_scale: bool = False,
                 std: float = INIT_STD):
        self.q_seq = normal_param(rng, (d, d), std)
        self.k_seq = normal_param(rng, (d, d), std)
        self.v_seq = normal_param(rng, (d, d), std)
        self.q_gra = normal_param(rng, (d, d), std)
        self.k_gra = normal_param(rng, (d, d), std)
        self.v_gra = normal_param(rng, (d, d), std)
        d_k = float(d if scale is None else scale)
        if not d_k > 0:
            raise ConfigError(f"d_k must be positive, got {d_k}")
        self.divisor = np.sqrt(d_k) if sqrt_scale else d_k

    def __call__(self, f_seq, f_gra, seq_mask=None, node_mask=None, return_weights: bool = False):
        """Return (F_fseq, F_fgra): M rows of graph content, N rows of sequence content."""
        f_seq, f_gra = T.as_tensor(f_seq), T.as_tensor(f_gra)
        if f_seq.shape[-2] == 0 or f_gra.shape[-2] == 0:
            raise ValidationError("cross attention needs non-empty sequence and graph inputs")
        seq_keys = None if seq_mask is None else np.asarray(seq_mask, bool)[..., None, :]
        node_keys = None if node_mask is None else np.asarray(node_mask, bool)[..., None, :]

        q_seq, k_seq, v_seq = (T.matmul(f_seq, w) for w in (self.q_seq, self.k_seq, self.v_seq))
        q_gra, k_gra, v_gra = (T.matmul(f_gra, w) for w in (self.q_gra, self.k_gra, self.v_gra))
        attn_sg = T.softmax_masked(T.matmul(q_seq, k_gra.T) * (1.0 / self.divisor), node_keys)
        attn_gs = T.softmax_masked(T.matmul(q_gra, k_seq.T) * (1.0 / self.divisor), seq_keys)
        f_fseq = T.matmul(attn_sg, v_gra)
        f_fgra = T.matmul(attn_gs, v_seq)
        if return_weights:
            return f_fseq, f_fgra, attn_sg, attn_gs
        return f_fseq, f_fgra


# ---------------------------------------------------------------- the block

@dataclass
class AuxLosses:
    load: Tensor
    importance: Tensor
    hard_counts: np.ndarray
    soft_mass: np.ndarray

    @classmethod
    def zero(cls, experts: int) -> "AuxLosses":
        return cls(Tensor(0.0), Tensor(0.0), np.zeros(experts, dtype=np.int64), np.zeros(experts))


class ModalityMixer(Module):
    """Per-modality routing network plus expert bank (or a dense FFN when MoE is off)."""

    def __init__(self, rng: RngState, n_in: int, d: int, experts: int, top_k: int, slope: float,
                 use_moe: bool, std: float = INIT_STD):
        if use_moe:
            self.router = Router(rng, n_in, experts, top_k, std)
            self.bank = ExpertBank(rng, n_in, d, experts, slope, std)
        else:
            self.ffn = MLP(rng, n_in, 2 * d, d, slope, std)
        self.use_moe = use_moe
        self.experts = experts

    def __call__(self, x: Tensor, training: bool, rng: RngState | None,
                 omega_imp: float) -> tuple[Tensor, AuxLosses]:
        if not self.use_moe:
            return self.ffn(x), AuxLosses.zero(self.experts)
        routed = self.router(x, training, rng)
        mass = routed.soft_mass
        aux = AuxLosses(load_balance_loss(mass), importance_loss(mass, omega_imp),
                        routed.hard_counts, mass.values.copy())
        return moe_forward(x, routed, self.bank), aux


class SCMoEBlock(Module):
    def __init__(self, rng: RngState, d: int, experts: int = 4, top_k: int = 2, slope: float = 0.01,
                 use_cra: bool = True, use_moe: bool = True, d_k: float | None = None,
                 sqrt_scale: bool = False, std: float = INIT_STD):
        if use_cra:
            self.cross = CrossAttention(rng, d, d_k, sqrt_scale, std)
        n_in = 2 * d if use_cra else d
        self.seq_mixer = ModalityMixer(rng, n_in, d, experts, top_k, slope, use_moe, std)
        self.gra_mixer = ModalityMixer(rng, n_in, d, experts, top_k, slope, use_moe, std)
        self.use_cra = use_cra
        self.use_moe = use_moe

    def __call__(self, f_seq, f_gra, seq_mask, node_mask, training: bool = False,
                 rng: RngState | None = None, omega_imp: float = 0.1):
        """Return (F_seq', F_gra', aux) where aux maps 'seq'/'gra' to AuxLosses."""
        f_seq, f_gra = T.as_tensor(f_seq), T.as_tensor(f_gra)
        seq_mask = np.asarray(seq_mask, bool)
        node_mask = np.asarray(node_mask, bool)
        if self.use_cra:
            if f_seq.shape[-2] != f_gra.shape[-2]:
                raise ShapeError(f"cross routing needs M == N, got {f_seq.shape} and {f_gra.shape}")
            f_fseq, f_fgra = self.cross(f_seq, f_gra, seq_mask, node_mask)
            route_seq = T.concat([f_seq, f_fseq], axis=-1)
            route_gra = T.concat([f_gra, f_fgra], axis=-1)
        else:
            route_seq, route_gra = f_seq, f_gra
        out_seq, aux_seq = self._mix(self.seq_mixer, f_seq, route_seq, seq_mask, training, rng, omega_imp)
        out_gra, aux_gra = self._mix(self.gra_mixer, f_gra, route_gra, node_mask, training, rng, omega_imp)
        return out_seq, out_gra, {"seq": aux_seq, "gra": aux_gra}

    @staticmethod
    def _mix(mixer: ModalityMixer, features: Tensor, route_in: Tensor, mask: np.ndarray,
             training: bool, rng, omega_imp: float):
        lead = features.shape[:-1]
        d = features.shape[-1]
        flat_in = T.reshape(route_in, (-1, route_in.shape[-1]))
        rows = np.flatnonzero(np.broadcast_to(mask, lead).reshape(-1))
        if rows.size == 0:
            raise ValidationError("no real tokens to mix")
        delta, aux = mixer(T.index(flat_in, rows), training, rng, omega_imp)
        full = T.reshape(T.scatter_rows(delta, rows, flat_in.shape[0]), lead + (d,))
        return features + full, aux
