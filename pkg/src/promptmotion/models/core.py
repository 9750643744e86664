"""Model variants: deterministic autoencoder, VAE, and past-conditioned VAE.

All three share the same skeleton of parts: a text pathway fed by the
aggregated description embedding, a motion encoder over pose-feature
frames, and a motion decoder. The deterministic variant uses the
aggregated vector itself as the text latent; the stochastic variants read
Gaussian parameters off learnable distribution tokens and sample with the
reparameterization trick. The past-conditioned variant additionally
appends a separator token and encoded features of the previous segment's
last P generated frames to the text-encoder input.

Latents from the text and motion sides always share the dimension d; the
training loss aligns them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from ..embedding import TOKEN_MATRIX, VECTOR, AggregatedEmbedding
from ..errors import (
    ConfigError,
    MissingPastContext,
    NonFiniteLoss,
    PastWindowTooLarge,
    ShapeMismatch,
    ValidationError,
)
from ..motion import MotionSequence
from .nets import DistributionTokenEncoder, MotionDecoder, PastEncoder

VARIANT_NAMES = ("deterministic_ae", "vae", "past_conditioned_vae")


@dataclass(frozen=True)
class ModelVariant:
    """Variant selector plus the hyperparameters shared by the networks."""

    variant: str = "vae"
    latent_dim: int = 32
    embed_dim: int = 16  # c for vector embedders, e for token matrices
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    num_joints: int = 22
    w_reconstruction: float = 1.0
    w_kl: float = 1e-5
    w_align: float = 1e-5
    past_frames: int = 5
    pooling: str = "token"  # deterministic motion pooling: "token" or "mean"

    def __post_init__(self):
        if self.variant not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {self.variant!r}; one of {VARIANT_NAMES}")
        if self.pooling not in ("token", "mean"):
            raise ConfigError(f"pooling must be 'token' or 'mean', got {self.pooling!r}")
        if min(self.latent_dim, self.embed_dim, self.hidden_dim, self.num_layers,
               self.num_heads, self.num_joints) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError("hidden_dim must be divisible by num_heads")
        if self.variant == "deterministic_ae" and self.embed_dim != self.latent_dim:
            raise ConfigError(
                "the deterministic variant uses the aggregated vector as the text "
                f"latent, so embed_dim (c={self.embed_dim}) must equal "
                f"latent_dim (d={self.latent_dim})"
            )
        if self.uses_past and self.past_frames < 1:
            raise ConfigError("past_frames must be >= 1")

    @property
    def stochastic(self) -> bool:
        return self.variant != "deterministic_ae"

    @property
    def uses_past(self) -> bool:
        return self.variant == "past_conditioned_vae"

    @property
    def decodes_root_translation(self) -> bool:
        # the deterministic autoencoder generates local pose only, no locomotion
        return self.variant != "deterministic_ae"

    @property
    def embedder_kind(self) -> str:
        return VECTOR if self.variant == "deterministic_ae" else TOKEN_MATRIX

    @property
    def feature_dim(self) -> int:
        return self.num_joints * 6 + (3 if self.decodes_root_translation else 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianParams:
    """Diagonal Gaussian: mean and elementwise-positive std, shape (..., d)."""

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ShapeMismatch("mu and sigma must have equal shapes")


@dataclass(frozen=True)
class PastContext:
    """Past-encoder features over the last P frames of the previous segment.

    The first segment of a series carries the zero context.
    """

    features: torch.Tensor  # (P, hidden_dim)


@dataclass(frozen=True)
class PhraseSeries:
    """A sequence of action phrases with per-phrase target durations."""

    phrases: tuple
    durations: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "phrases", tuple(self.phrases))
        object.__setattr__(self, "durations", tuple(int(n) for n in self.durations))
        if len(self.phrases) < 1 or len(self.phrases) != len(self.durations):
            raise ValidationError("series needs phrases and durations of equal length >= 1")
        if any(n < 1 for n in self.durations):
            raise ValidationError("series durations must be >= 1")


# ---------------------------------------------------------------------------
# Diagonal-Gaussian KL
# ---------------------------------------------------------------------------

def kl_diagonal_gaussians(
    mu1: torch.Tensor, sigma1: torch.Tensor, mu2: torch.Tensor, sigma2: torch.Tensor
) -> torch.Tensor:
    """KL(N(mu1, diag(sigma1^2)) || N(mu2, diag(sigma2^2))), summed over dims."""
    var1, var2 = sigma1**2, sigma2**2
    per_dim = torch.log(sigma2 / sigma1) + (var1 + (mu1 - mu2) ** 2) / (2 * var2) - 0.5
    return per_dim.sum(dim=-1)


def kl_to_standard_normal(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL against N(0, I); exactly zero at the standard normal."""
    per_dim = 0.5 * (sigma**2 + mu**2 - 1.0) - torch.log(sigma)
    return per_dim.sum(dim=-1)


def masked_mse(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean squared error over valid frames only; valid is (B, N) bool."""
    diff = (pred - target) ** 2 * valid[..., None]
    return diff.sum() / (valid.sum() * pred.shape[-1])


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------

class TextToMotionModel(nn.Module):
    """Encoders, decoder, losses, and sampling for one variant.

    Weights are float64 and all stochasticity flows through explicit
    generators, so a fixed seed makes training and generation
    bit-reproducible on one device.
    """

    def __init__(self, variant: ModelVariant):
        super().__init__()
        self.variant = variant
        v = variant
        if v.stochastic:
            self.text_encoder = DistributionTokenEncoder(
                v.embed_dim, v.hidden_dim, v.num_layers, v.num_heads,
                num_tokens=2, with_separator=v.uses_past,
            )
            self.text_mu = nn.Linear(v.hidden_dim, v.latent_dim)
            self.text_sigma = nn.Linear(v.hidden_dim, v.latent_dim)
            self.motion_mu = nn.Linear(v.hidden_dim, v.latent_dim)
            self.motion_sigma = nn.Linear(v.hidden_dim, v.latent_dim)
            motion_tokens = 2
        else:
            self.motion_latent = nn.Linear(v.hidden_dim, v.latent_dim)
            motion_tokens = 1
        self.motion_encoder = DistributionTokenEncoder(
            v.feature_dim, v.hidden_dim, v.num_layers, v.num_heads,
            num_tokens=motion_tokens,
        )
        if v.uses_past:
            self.past_encoder = PastEncoder(v.feature_dim, v.hidden_dim)
        self.decoder = MotionDecoder(
            v.latent_dim, v.feature_dim, v.hidden_dim, v.num_layers, v.num_heads
        )
        self.to(torch.float64)
        self._default_generator = torch.Generator().manual_seed(0)

    # -- feature packing ----------------------------------------------------

    def motion_features(self, seq: MotionSequence) -> torch.Tensor:
        """Flatten a sequence to per-frame features (N, F) for this variant."""
        if seq.num_joints != self.variant.num_joints:
            raise ShapeMismatch(
                f"sequence has {seq.num_joints} joints, model expects "
                f"{self.variant.num_joints}"
            )
        rot = torch.from_numpy(np.ascontiguousarray(seq.rotations)).reshape(
            seq.num_frames, -1
        )
        if not self.variant.decodes_root_translation:
            return rot.to(torch.float64)
        trans = torch.from_numpy(np.ascontiguousarray(seq.root_translation))
        return torch.cat([rot, trans], dim=-1).to(torch.float64)

    def features_to_motion(self, feats: torch.Tensor, frame_rate: float = 20.0) -> MotionSequence:
        """Inverse of :meth:`motion_features` for one sample (N, F)."""
        j = self.variant.num_joints
        arr = feats.detach().cpu().numpy()
        rotations = arr[:, : j * 6].reshape(arr.shape[0], j, 6)
        if self.variant.decodes_root_translation:
            translation = arr[:, j * 6 :]
        else:
            translation = np.zeros((arr.shape[0], 3))
        return MotionSequence(rotations=rotations, root_translation=translation,
                              frame_rate=frame_rate)

    def _stack_motion(self, seqs: list[MotionSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        feats = [self.motion_features(s) for s in seqs]
        lengths = [f.shape[0] for f in feats]
        n_max = max(lengths)
        batch = torch.zeros(len(feats), n_max, feats[0].shape[1], dtype=torch.float64)
        valid = torch.zeros(len(feats), n_max, dtype=torch.bool)
        for i, f in enumerate(feats):
            batch[i, : f.shape[0]] = f
            valid[i, : f.shape[0]] = True
        return batch, valid

    def _stack_text(self, aggs: list[AggregatedEmbedding]) -> tuple[torch.Tensor, torch.Tensor]:
        for agg in aggs:
            if agg.kind != TOKEN_MATRIX:
                raise ShapeMismatch(
                    f"variant {self.variant.variant!r} expects token-matrix "
                    f"aggregated embeddings, got kind {agg.kind!r}"
                )
            if agg.dim != self.variant.embed_dim:
                raise ShapeMismatch(
                    f"embedding dim {agg.dim} != configured e={self.variant.embed_dim}"
                )
        lengths = [a.values.shape[0] for a in aggs]
        g_max = max(lengths)
        rows = torch.zeros(len(aggs), g_max, self.variant.embed_dim, dtype=torch.float64)
        valid = torch.zeros(len(aggs), g_max, dtype=torch.bool)
        for i, agg in enumerate(aggs):
            rows[i, : lengths[i]] = torch.from_numpy(np.ascontiguousarray(agg.values))
            mask = agg.mask if agg.mask is not None else np.ones(lengths[i], dtype=bool)
            valid[i, : lengths[i]] = torch.from_numpy(np.ascontiguousarray(mask))
        return rows, valid

    # -- encoders -----------------------------------------------------------

    def encode_text_batch(
        self, aggs: list[AggregatedEmbedding], past: torch.Tensor | None = None
    ):
        """Batch text encoding; (B, P, hidden) past features for the past variant.

        Returns a latent tensor (B, d) for the deterministic variant,
        otherwise GaussianParams over (B, d).
        """
        if self.variant.uses_past and past is None:
            raise MissingPastContext(
                "the past-conditioned variant needs past features (zero context "
                "for the first segment)"
            )
        if not self.variant.uses_past and past is not None:
            raise ShapeMismatch("past context is only valid for the past-conditioned variant")
        if not self.variant.stochastic:
            values = []
            for agg in aggs:
                if agg.kind != VECTOR:
                    raise ShapeMismatch(
                        "deterministic variant expects vector aggregated embeddings, "
                        f"got kind {agg.kind!r}"
                    )
                if agg.dim != self.variant.latent_dim:
                    raise ShapeMismatch(
                        f"aggregated vector dim {agg.dim} != latent dim "
                        f"{self.variant.latent_dim}"
                    )
                values.append(torch.from_numpy(np.ascontiguousarray(agg.values)))
            # the aggregated vector itself is the text latent
            return torch.stack(values).to(torch.float64)
        rows, valid = self._stack_text(aggs)
        tokens, _ = self.text_encoder(rows, valid, extra=past)
        mu = self.text_mu(tokens[:, 0])
        sigma = torch.nn.functional.softplus(self.text_sigma(tokens[:, 1]))
        return GaussianParams(mu=mu, sigma=sigma)

    def encode_text(self, v_aggr: AggregatedEmbedding, past: PastContext | None = None):
        """Single-sample text encoding: latent (d,) or GaussianParams of (d,)."""
        past_batch = None
        if past is not None:
            past_batch = past.features[None].to(torch.float64)
        out = self.encode_text_batch([v_aggr], past=past_batch)
        if isinstance(out, GaussianParams):
            return GaussianParams(mu=out.mu[0], sigma=out.sigma[0])
        return out[0]

    def encode_motion_batch(self, seqs: list[MotionSequence]):
        feats, valid = self._stack_motion(seqs)
        tokens, rows = self.motion_encoder(feats, valid)
        if self.variant.stochastic:
            mu = self.motion_mu(tokens[:, 0])
            sigma = torch.nn.functional.softplus(self.motion_sigma(tokens[:, 1]))
            return GaussianParams(mu=mu, sigma=sigma)
        if self.variant.pooling == "mean":
            weights = valid.to(rows.dtype)[..., None]
            pooled = (rows * weights).sum(dim=1) / weights.sum(dim=1)
        else:
            pooled = tokens[:, 0]
        return self.motion_latent(pooled)

    def encode_motion(self, seq: MotionSequence):
        out = self.encode_motion_batch([seq])
        if isinstance(out, GaussianParams):
            return GaussianParams(mu=out.mu[0], sigma=out.sigma[0])
        return out[0]

    # -- sampling and decoding ----------------------------------------------

    def _resolve_generator(
        self, generator: torch.Generator | None, seed: int | None
    ) -> torch.Generator:
        if generator is not None:
            return generator
        if seed is not None:
            return torch.Generator().manual_seed(int(seed))
        return self._default_generator

    def sample_latent(
        self,
        params: GaussianParams,
        generator: torch.Generator | None = None,
        seed: int | None = None,
    ) -> torch.Tensor:
        """Reparameterized draw z = mu + sigma * eps with eps ~ N(0, I)."""
        if torch.any(params.sigma <= 0):
            raise ValidationError("sigma must be positive")
        gen = self._resolve_generator(generator, seed)
        eps = torch.randn(params.mu.shape, generator=gen, dtype=params.mu.dtype)
        return params.mu + params.sigma * eps

    def decode_batch(self, z: torch.Tensor, durations: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
        """Decode latents (B, d) to padded features (B, Nmax, F) plus frame mask."""
        if z.ndim != 2 or z.shape[1] != self.variant.latent_dim:
            raise ShapeMismatch(f"latents must be (B, {self.variant.latent_dim}), got {tuple(z.shape)}")
        if any(n < 1 for n in durations) or len(durations) != z.shape[0]:
            raise ShapeMismatch("need one positive duration per latent")
        n_max = max(durations)
        valid = torch.zeros(len(durations), n_max, dtype=torch.bool)
        for i, n in enumerate(durations):
            valid[i, :n] = True
        feats = self.decoder(z, n_max, valid=valid)
        return feats, valid

    def decode_motion(
        self, z: torch.Tensor, duration: int, frame_rate: float = 20.0
    ) -> MotionSequence:
        """Decode one latent (d,) into a motion sequence of ``duration`` frames."""
        if z.ndim != 1 or z.shape[0] != self.variant.latent_dim:
            raise ShapeMismatch(
                f"latent must be ({self.variant.latent_dim},), got {tuple(z.shape)}"
            )
        if duration < 1:
            raise ShapeMismatch("duration must be >= 1")
        feats, _ = self.decode_batch(z[None], [int(duration)])
        return self.features_to_motion(feats[0, : int(duration)], frame_rate=frame_rate)

    def latent_interpolate(
        self, z_a: torch.Tensor, z_b: torch.Tensor, t: float, duration: int,
        frame_rate: float = 20.0,
    ) -> MotionSequence:
        """Decode the convex combination (1-t)*z_a + t*z_b."""
        if z_a.shape != z_b.shape:
            raise ShapeMismatch("latents must share dimension")
        if not (0.0 <= t <= 1.0):
            raise ValidationError(f"interpolation weight must be in [0, 1], got {t}")
        return self.decode_motion((1.0 - t) * z_a + t * z_b, duration, frame_rate)

    # -- past context ---------------------------------------------------------

    def zero_past_context(self) -> PastContext:
        return PastContext(
            features=torch.zeros(
                self.variant.past_frames, self.variant.hidden_dim, dtype=torch.float64
            )
        )

    def past_context_from_features(self, frame_feats: torch.Tensor) -> PastContext:
        """Encode the last P rows of decoded frame features (N, F) into a context."""
        p = self.variant.past_frames
        if frame_feats.shape[0] < p:
            raise PastWindowTooLarge(
                f"past window P={p} exceeds segment length {frame_feats.shape[0]}"
            )
        return PastContext(features=self.past_encoder(frame_feats[-p:][None])[0])

    # -- losses ---------------------------------------------------------------

    def _forward_losses(
        self,
        aggs: list[AggregatedEmbedding],
        seqs: list[MotionSequence],
        generator: torch.Generator | None,
        past: torch.Tensor | None,
    ):
        target, valid = self._stack_motion(seqs)
        durations = [s.num_frames for s in seqs]
        zero = torch.zeros((), dtype=torch.float64)
        if self.variant.stochastic:
            t_params = self.encode_text_batch(aggs, past=past)
            m_params = self.encode_motion_batch(seqs)
            z_t = self.sample_latent(t_params, generator=generator)
            z_m = self.sample_latent(m_params, generator=generator)
            kl = (
                kl_to_standard_normal(t_params.mu, t_params.sigma)
                + kl_to_standard_normal(m_params.mu, m_params.sigma)
                + kl_diagonal_gaussians(t_params.mu, t_params.sigma, m_params.mu, m_params.sigma)
                + kl_diagonal_gaussians(m_params.mu, m_params.sigma, t_params.mu, t_params.sigma)
            ).mean()
        else:
            z_t = self.encode_text_batch(aggs)
            z_m = self.encode_motion_batch(seqs)
            kl = zero
        decoded_t, _ = self.decode_batch(z_t, durations)
        decoded_m, _ = self.decode_batch(z_m, durations)
        rec = 0.5 * (masked_mse(decoded_t, target, valid) + masked_mse(decoded_m, target, valid))
        align = ((z_t - z_m) ** 2).mean()
        return rec, kl, align, decoded_t, valid

    def loss_total(
        self,
        batch: list[tuple[AggregatedEmbedding, MotionSequence]],
        generator: torch.Generator | None = None,
        seed: int | None = None,
        past: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, dict]:
        """Weighted training loss and its per-term breakdown for one batch.

        ``past`` (B, P, hidden) applies to the past-conditioned variant;
        omitted, the zero context is used for every sample.
        """
        if not batch:
            raise ValidationError("empty batch")
        gen = self._resolve_generator(generator, seed)
        if self.variant.uses_past and past is None:
            past = torch.zeros(
                len(batch), self.variant.past_frames, self.variant.hidden_dim,
                dtype=torch.float64,
            )
        aggs = [pair[0] for pair in batch]
        seqs = [pair[1] for pair in batch]
        rec, kl, align, _, _ = self._forward_losses(aggs, seqs, gen, past)
        v = self.variant
        total = v.w_reconstruction * rec + v.w_kl * kl + v.w_align * align
        if not torch.isfinite(total):
            raise NonFiniteLoss("training loss is not finite; halting")
        breakdown = {
            "total": float(total),
            "reconstruction": float(rec),
            "kl": float(kl),
            "alignment": float(align),
        }
        return total, breakdown

    def two_pass_loss(
        self,
        pair_batch: list[tuple[tuple[AggregatedEmbedding, MotionSequence],
                               tuple[AggregatedEmbedding, MotionSequence]]],
        generator: torch.Generator | None = None,
        seed: int | None = None,
    ) -> tuple[torch.Tensor, dict]:
        """Two consecutive segments per sample: pass 1 with the zero context,
        pass 2 conditioned on the last P frames generated in pass 1.

        The past features stay attached to the graph, so pass-2 loss reaches
        the pass-1 decoder weights.
        """
        if not self.variant.uses_past:
            raise ShapeMismatch("two-pass training applies to the past-conditioned variant")
        if not pair_batch:
            raise ValidationError("empty batch")
        gen = self._resolve_generator(generator, seed)
        firsts = [pair[0] for pair in pair_batch]
        seconds = [pair[1] for pair in pair_batch]
        p = self.variant.past_frames
        for _, seq in firsts:
            if seq.num_frames < p:
                raise PastWindowTooLarge(
                    f"past window P={p} exceeds first-segment length {seq.num_frames}"
                )
        zero_past = torch.zeros(
            len(pair_batch), p, self.variant.hidden_dim, dtype=torch.float64
        )
        rec1, kl1, align1, decoded1, _ = self._forward_losses(
            [a for a, _ in firsts], [s for _, s in firsts], gen, zero_past
        )
        # last P *valid* frames of the pass-1 text-route generation
        windows = torch.stack(
            [decoded1[i, seq.num_frames - p : seq.num_frames]
             for i, (_, seq) in enumerate(firsts)]
        )
        past = self.past_encoder(windows)
        rec2, kl2, align2, _, _ = self._forward_losses(
            [a for a, _ in seconds], [s for _, s in seconds], gen, past
        )
        v = self.variant
        rec, kl, align = rec1 + rec2, kl1 + kl2, align1 + align2
        total = v.w_reconstruction * rec + v.w_kl * kl + v.w_align * align
        if not torch.isfinite(total):
            raise NonFiniteLoss("training loss is not finite; halting")
        breakdown = {
            "total": float(total),
            "reconstruction": float(rec),
            "kl": float(kl),
            "alignment": float(align),
            "pass1_reconstruction": float(rec1),
            "pass2_reconstruction": float(rec2),
        }
        return total, breakdown


def build_model(variant: ModelVariant, seed: int = 0) -> TextToMotionModel:
    """Construct a model with weights drawn deterministically from ``seed``."""
    torch.manual_seed(int(seed))
    model = TextToMotionModel(variant)
    model._default_generator = torch.Generator().manual_seed(int(seed) + 1)
    return model
