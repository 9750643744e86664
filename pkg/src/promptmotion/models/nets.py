"""Small attention backbones shared by the model variants.

Everything runs in float64 on CPU: the networks are tiny (2 layers by
default) and double precision keeps finite-difference gradient checks and
bit-reproducibility uncomplicated. Dropout is zero everywhere; sampling is
the only stochastic operation in the system.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def positional_encoding(length: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Sinusoidal position table (length, dim); supports any sequence length."""
    position = torch.arange(length, dtype=dtype)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table


def _encoder(hidden_dim: int, num_layers: int, num_heads: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=hidden_dim,
        nhead=num_heads,
        dim_feedforward=4 * hidden_dim,
        dropout=0.0,
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)


class DistributionTokenEncoder(nn.Module):
    """Sequence encoder that reads outputs off learnable lead tokens.

    The input rows are projected to the hidden width, positional encodings
    added, and ``num_tokens`` learnable tokens prepended; outputs at the
    token positions summarize the sequence. An optional trailing block
    (separator token + externally computed feature rows) supports past
    conditioning.
    """

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        num_layers: int,
        num_heads: int,
        num_tokens: int,
        with_separator: bool = False,
    ):
        super().__init__()
        self.in_proj = nn.Linear(in_dim, hidden_dim)
        self.tokens = nn.Parameter(torch.randn(num_tokens, hidden_dim) * 0.02)
        self.separator = (
            nn.Parameter(torch.randn(hidden_dim) * 0.02) if with_separator else None
        )
        self.encoder = _encoder(hidden_dim, num_layers, num_heads)
        self.hidden_dim = hidden_dim
        self.num_tokens = num_tokens

    def forward(
        self,
        rows: torch.Tensor,
        valid: torch.Tensor,
        extra: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """rows (B, L, in_dim), valid (B, L) bool, extra (B, P, hidden) or None.

        Returns (token_out, row_out): encoder outputs at the lead-token
        positions (B, num_tokens, hidden) and at the input-row positions
        (B, L, hidden).
        """
        batch = rows.shape[0]
        x = self.in_proj(rows) + positional_encoding(
            rows.shape[1], self.hidden_dim, dtype=rows.dtype
        )
        lead = self.tokens[None].expand(batch, -1, -1)
        parts = [lead, x]
        keep = [
            torch.ones(batch, self.num_tokens, dtype=torch.bool),
            valid,
        ]
        if extra is not None:
            if self.separator is None:
                raise ValueError("encoder was built without a separator token")
            sep = self.separator[None, None].expand(batch, 1, -1)
            parts.extend([sep, extra])
            keep.append(torch.ones(batch, 1 + extra.shape[1], dtype=torch.bool))
        seq = torch.cat(parts, dim=1)
        padding = ~torch.cat(keep, dim=1)
        out = self.encoder(seq, src_key_padding_mask=padding)
        rows_end = self.num_tokens + rows.shape[1]
        return out[:, : self.num_tokens], out[:, self.num_tokens : rows_end]


class MotionDecoder(nn.Module):
    """Decode a latent into per-frame pose features of arbitrary duration.

    Frame queries are sinusoidal position codes shifted by a projection of
    the latent; two self-attention layers then produce the frame features.
    Deterministic given the latent and the weights.
    """

    def __init__(
        self,
        latent_dim: int,
        out_dim: int,
        hidden_dim: int,
        num_layers: int,
        num_heads: int,
    ):
        super().__init__()
        self.z_proj = nn.Linear(latent_dim, hidden_dim)
        self.encoder = _encoder(hidden_dim, num_layers, num_heads)
        self.out_proj = nn.Linear(hidden_dim, out_dim)
        self.hidden_dim = hidden_dim

    def forward(
        self, z: torch.Tensor, num_frames: int, valid: torch.Tensor | None = None
    ) -> torch.Tensor:
        """z (B, d) -> features (B, num_frames, out_dim); valid masks padded frames."""
        queries = positional_encoding(num_frames, self.hidden_dim, dtype=z.dtype)
        x = queries[None] + self.z_proj(z)[:, None, :]
        padding = None if valid is None else ~valid
        out = self.encoder(x, src_key_padding_mask=padding)
        return self.out_proj(out)


class PastEncoder(nn.Module):
    """Project the trailing frames of a previous segment to conditioning features."""

    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, hidden_dim)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames (B, P, in_dim) -> features (B, P, hidden)."""
        return self.proj(frames)
