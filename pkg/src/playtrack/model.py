"""Group-activity network: LSTM input embedding, role encoding, stacked
self-attention, and swappable trajectory/classification heads.

The attention block follows z' = LN(FF(LN(Att(z)))) + z with one residual
around the whole block; ``standard_block`` switches to the conventional
two-residual transformer layout for comparison.

Internally, players are re-sorted into a content-derived canonical order
before the attention stack and unsorted afterwards.  This makes the
forward pass bitwise invariant (classification) / equivariant
(trajectories) under within-team permutations of the input, not just
invariant up to float rounding.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

N_OBJECTS = 11
EPS_PROB = 1e-12

HEAD_TRAJECTORY = "trajectory"
HEAD_CLASSIFICATION = "classification"

# counts how often a true-class probability had to be clamped in nll_loss
clamp_warnings = 0


@dataclass(frozen=True)
class NetsConfig:
    d_h: int = 32
    n_layers: int = 2  # N attention layers
    n_heads: int = 4
    input_steps: int = 10  # L
    horizon: int = 10  # H
    n_classes: int = 3  # K
    n_roles: int = 3
    lstm_layers: int = 1
    standard_block: bool = False
    layer_norm: bool = True

    def __post_init__(self):
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("need n_layers >= 1 and n_heads >= 1")
        if self.d_h % self.n_heads != 0:
            raise ValueError("d_h must be divisible by n_heads")


def paper_scale_config(**overrides) -> NetsConfig:
    return NetsConfig(**{"d_h": 256, "n_layers": 8, "n_heads": 64, **overrides})


def desk_scale_config(**overrides) -> NetsConfig:
    return NetsConfig(**{"d_h": 32, "n_layers": 2, "n_heads": 4, **overrides})


class MaybeLayerNorm(nn.Module):
    """Layer normalization with learned gain/bias; identity when disabled."""

    def __init__(self, width: int, enabled: bool):
        super().__init__()
        self.enabled = enabled
        if enabled:
            self.gain = nn.Parameter(torch.ones(width))
            self.bias = nn.Parameter(torch.zeros(width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return x
        mean = x.mean(dim=-1, keepdim=True)
        var = x.var(dim=-1, keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + 1e-5) * self.gain + self.bias


class MultiHeadAttention(nn.Module):
    """Per-head full-width projections, scaled dot product, concat through W^O."""

    def __init__(self, d_h: int, n_heads: int):
        super().__init__()
        self.d_h = d_h
        self.n_heads = n_heads
        self.w_q = nn.Linear(d_h, n_heads * d_h, bias=False)
        self.w_k = nn.Linear(d_h, n_heads * d_h, bias=False)
        self.w_v = nn.Linear(d_h, n_heads * d_h, bias=False)
        self.w_o = nn.Linear(n_heads * d_h, d_h, bias=False)

    def attention_weights(self, z: torch.Tensor) -> torch.Tensor:
        B, n, _ = z.shape
        q = self.w_q(z).view(B, n, self.n_heads, self.d_h).transpose(1, 2)
        k = self.w_k(z).view(B, n, self.n_heads, self.d_h).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_h)
        return torch.softmax(scores, dim=-1)  # (B, heads, n, n)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        B, n, _ = z.shape
        att = self.attention_weights(z)
        v = self.w_v(z).view(B, n, self.n_heads, self.d_h).transpose(1, 2)
        mixed = att @ v  # (B, heads, n, d_h)
        concat = mixed.transpose(1, 2).reshape(B, n, self.n_heads * self.d_h)
        return self.w_o(concat)


class FeedForward(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int):
        super().__init__()
        self.lin1 = nn.Linear(d_in, d_hidden)
        self.lin2 = nn.Linear(d_hidden, d_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class AttentionBlock(nn.Module):
    def __init__(self, cfg: NetsConfig):
        super().__init__()
        self.standard = cfg.standard_block
        self.att = MultiHeadAttention(cfg.d_h, cfg.n_heads)
        self.ln1 = MaybeLayerNorm(cfg.d_h, cfg.layer_norm)
        self.ff = FeedForward(cfg.d_h, cfg.d_h, cfg.d_h)
        self.ln2 = MaybeLayerNorm(cfg.d_h, cfg.layer_norm)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if self.standard:
            a = self.ln1(z + self.att(z))
            return self.ln2(a + self.ff(a))
        return self.ln2(self.ff(self.ln1(self.att(z)))) + z


def role_one_hot(n_roles: int = 3, dtype=torch.float64) -> torch.Tensor:
    """(11, n_roles) one-hot rows for [ball, 5 offense, 5 defense]."""
    roles = torch.zeros(N_OBJECTS, n_roles, dtype=dtype)
    roles[0, 0] = 1.0
    roles[1:6, 1] = 1.0
    roles[6:11, 2] = 1.0
    return roles


class TrajectoryEncoder(nn.Module):
    """Per-object LSTM summary, role one-hot concat, projection to width d_h."""

    def __init__(self, cfg: NetsConfig):
        super().__init__()
        self.cfg = cfg
        self.lstm = nn.LSTM(2, cfg.d_h, num_layers=cfg.lstm_layers, batch_first=True)
        self.role_proj = nn.Linear(cfg.d_h + cfg.n_roles, cfg.d_h)
        self.blocks = nn.ModuleList(AttentionBlock(cfg) for _ in range(cfg.n_layers))

    def embed_inputs(self, tau: torch.Tensor) -> torch.Tensor:
        """z^0 for each object; tau is (B, 11, L, 2)."""
        if tau.shape[-2] != self.cfg.input_steps:
            raise ValueError(
                f"expected {self.cfg.input_steps} input steps, got {tau.shape[-2]}"
            )
        B = tau.shape[0]
        flat = tau.reshape(B * N_OBJECTS, tau.shape[-2], 2)
        _, (h_n, _) = self.lstm(flat)
        summary = h_n[-1].reshape(B, N_OBJECTS, self.cfg.d_h)
        roles = role_one_hot(self.cfg.n_roles, dtype=tau.dtype).to(tau.device)
        with_roles = torch.cat([summary, roles.expand(B, -1, -1)], dim=-1)
        return self.role_proj(with_roles)

    def run_blocks(self, z: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            z = block(z)
        return z


def _canonical_perm(z0: torch.Tensor) -> torch.Tensor:
    """Per-sample object order: ball, then each team sorted by embedding.

    Sorting on content makes downstream reductions independent of the
    input slot order, so permuted inputs reproduce bitwise-equal outputs.
    """
    arr = z0.detach().cpu().numpy()
    B = arr.shape[0]
    perm = np.empty((B, N_OBJECTS), dtype=np.int64)
    perm[:, 0] = 0
    for b in range(B):
        att = 1 + np.lexsort(arr[b, 1:6].T[::-1])
        dfn = 6 + np.lexsort(arr[b, 6:11].T[::-1])
        perm[b, 1:6] = att
        perm[b, 6:11] = dfn
    return torch.from_numpy(perm).to(z0.device)


def _apply_perm(z: torch.Tensor, perm: torch.Tensor) -> torch.Tensor:
    return torch.gather(z, 1, perm.unsqueeze(-1).expand(-1, -1, z.shape[-1]))


def _invert_perm(perm: torch.Tensor) -> torch.Tensor:
    inv = torch.empty_like(perm)
    inv.scatter_(1, perm, torch.arange(perm.shape[1], device=perm.device)
                 .expand_as(perm))
    return inv


class TrajectoryHead(nn.Module):
    """Role-specific decoders; one shared across attackers, one across defenders."""

    def __init__(self, cfg: NetsConfig):
        super().__init__()
        self.horizon = cfg.horizon
        self.ball_dec = FeedForward(cfg.d_h, cfg.d_h, 2 * cfg.horizon)
        self.attacker_dec = FeedForward(cfg.d_h, cfg.d_h, 2 * cfg.horizon)
        self.defender_dec = FeedForward(cfg.d_h, cfg.d_h, 2 * cfg.horizon)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        B = z.shape[0]
        out = torch.cat(
            [
                self.ball_dec(z[:, 0:1]),
                self.attacker_dec(z[:, 1:6]),
                self.defender_dec(z[:, 6:11]),
            ],
            dim=1,
        )
        return out.reshape(B, N_OBJECTS, self.horizon, 2)


class ClassificationHead(nn.Module):
    """Team-pooled play embedding through a feedforward softmax classifier."""

    def __init__(self, cfg: NetsConfig):
        super().__init__()
        self.ff = FeedForward(3 * cfg.d_h, cfg.d_h, cfg.n_classes)

    def pool(self, z: torch.Tensor) -> torch.Tensor:
        return torch.cat(
            [z[:, 0], z[:, 1:6].sum(dim=1), z[:, 6:11].sum(dim=1)], dim=-1
        )

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = self.pool(z)
        return torch.softmax(self.ff(pooled), dim=-1), pooled


class GroupActivityNet(nn.Module):
    def __init__(self, cfg: NetsConfig, head: str = HEAD_TRAJECTORY):
        super().__init__()
        if head not in (HEAD_TRAJECTORY, HEAD_CLASSIFICATION):
            raise ValueError(f"unknown head kind {head!r}")
        self.cfg = cfg
        self.head_kind = head
        self.encoder = TrajectoryEncoder(cfg)
        if head == HEAD_TRAJECTORY:
            self.head = TrajectoryHead(cfg)
        else:
            self.head = ClassificationHead(cfg)
        self.double()

    def encode(self, tau: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Final-layer embeddings in canonical order, plus the permutation used."""
        z0 = self.encoder.embed_inputs(tau)
        perm = _canonical_perm(z0)
        z = self.encoder.run_blocks(_apply_perm(z0, perm))
        return z, perm

    def forward(self, tau: torch.Tensor):
        z, perm = self.encode(tau)
        if self.head_kind == HEAD_TRAJECTORY:
            nu_canon = self.head(z)
            flat = nu_canon.reshape(nu_canon.shape[0], N_OBJECTS, -1)
            restored = torch.gather(
                flat,
                1,
                _invert_perm(perm).unsqueeze(-1).expand(-1, -1, flat.shape[-1]),
            )
            return restored.reshape(nu_canon.shape)
        probs, _ = self.head(z)
        return probs

    def play_embedding(self, tau: torch.Tensor) -> torch.Tensor:
        """Team-pooled embedding ahead of the classifier feedforward."""
        if self.head_kind != HEAD_CLASSIFICATION:
            raise ValueError("play embeddings require a classification head")
        z, _ = self.encode(tau)
        return self.head.pool(z)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    gen = torch.Generator().manual_seed(seed)
    for name, param in sorted(model.named_parameters()):
        if param.dim() >= 2:
            fan_in = param.shape[-1]
        else:
            fan_in = max(param.shape[0], 1)
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            param.uniform_(-bound, bound, generator=gen)


def build_model(
    cfg: NetsConfig, head: str = HEAD_TRAJECTORY, seed: int = 0
) -> GroupActivityNet:
    model = GroupActivityNet(cfg, head)
    init_parameters(model, seed)
    return model


# ---------------------------------------------------------------------------
# losses


def mse_loss(nu: torch.Tensor, nu_hat: torch.Tensor) -> torch.Tensor:
    """Squared velocity error over the horizon, scaled by 1/(2H) per object,
    averaged over objects and batch."""
    if nu.shape != nu_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(nu.shape)} vs {tuple(nu_hat.shape)}")
    H = nu.shape[-2]
    per_object = ((nu - nu_hat) ** 2).sum(dim=(-1, -2)) / (2.0 * H)
    return per_object.mean()


def nll_loss(
    y_true: torch.Tensor, y_hat: torch.Tensor, alpha: torch.Tensor
) -> torch.Tensor:
    """Class-weighted negative log likelihood over one-hot targets."""
    global clamp_warnings
    if y_true.shape != y_hat.shape:
        raise ValueError(
            f"shape mismatch: {tuple(y_true.shape)} vs {tuple(y_hat.shape)}"
        )
    needs_clamp = (y_hat <= 0) & (y_true > 0)
    if bool(needs_clamp.any()):
        clamp_warnings += int(needs_clamp.sum())
    clamped = torch.clamp(y_hat, min=EPS_PROB)
    weighted = alpha.to(y_hat.dtype) * y_true * torch.log(clamped)
    return -weighted.sum(dim=-1).mean()


# ---------------------------------------------------------------------------
# checkpoint container

CKPT_MAGIC = b"GAPCKPT1\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: GroupActivityNet, path: str | Path) -> None:
    names = sorted(n for n, _ in model.named_parameters())
    params = dict(model.named_parameters())
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.cfg),
        "head": model.head_kind,
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        params[n].detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes()
        for n in names
    )
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(digest)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(CKPT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", blob, off)
    off += 8
    header = json.loads(blob[off : off + header_len].decode("utf-8"))
    off += header_len
    payload = blob[off:-32]
    if hashlib.sha256(payload).digest() != blob[-32:]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header['format_version']}")

    arrays: dict[str, torch.Tensor] = {}
    pos = 0
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos)
        pos += count * 8
        arrays[entry["name"]] = torch.from_numpy(
            arr.reshape(entry["shape"]).copy()
        )
    if pos != len(payload):
        raise CheckpointError("checkpoint payload length mismatch")
    return header, arrays


def load_checkpoint(path: str | Path) -> GroupActivityNet:
    header, arrays = read_checkpoint(path)
    cfg = NetsConfig(**header["config"])
    model = GroupActivityNet(cfg, header["head"])
    own = dict(model.named_parameters())
    if set(own) != set(arrays):
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        raise CheckpointError(
            f"parameter name mismatch (missing={missing}, unexpected={extra})"
        )
    with torch.no_grad():
        for name, tensor in arrays.items():
            if tuple(own[name].shape) != tuple(tensor.shape):
                raise CheckpointError(f"shape mismatch for {name}")
            own[name].copy_(tensor)
    return model


def transfer_base(
    source_ckpt: str | Path, cfg: NetsConfig, head: str, head_seed: int
) -> GroupActivityNet:
    """New model with the encoder copied from a checkpoint and a fresh head.

    The source may carry either head kind; only encoder arrays transfer."""
    header, arrays = read_checkpoint(source_ckpt)
    src_cfg = NetsConfig(**header["config"])
    for key in ("d_h", "n_layers", "n_heads", "input_steps", "lstm_layers",
                "standard_block", "layer_norm", "n_roles"):
        if getattr(src_cfg, key) != getattr(cfg, key):
            raise CheckpointError(
                f"config mismatch on {key}: checkpoint has "
                f"{getattr(src_cfg, key)}, requested {getattr(cfg, key)}"
            )
    model = build_model(cfg, head, seed=head_seed)
    own = dict(model.named_parameters())
    with torch.no_grad():
        for name, tensor in arrays.items():
            if name.startswith("encoder."):
                if name not in own or tuple(own[name].shape) != tuple(tensor.shape):
                    raise CheckpointError(f"encoder parameter mismatch for {name}")
                own[name].copy_(tensor)
    return model


def segments_to_tensors(segments, with_future: bool = False):
    """Stack PlaySegments into (tau, nu) double tensors."""
    tau = torch.from_numpy(np.stack([s.tau for s in segments])).to(torch.float64)
    if not with_future:
        return tau, None
    nu = torch.from_numpy(np.stack([s.nu for s in segments])).to(torch.float64)
    return tau, nu
