"""Toy causal video codec: 4x temporal compression with exact pair round trips.

A pixel video of F frames (F - 1 divisible by 4) maps to F' = (F - 1)/4 + 1
latent frames: the first frame passes through untouched, every following
4-frame chunk is reduced to its temporal mean ("block-mean codec"). An edit
target repeated four times therefore encodes losslessly, which is the whole
point: the decoder can always recover the target frame independently of any
reasoning frames in front of it.

Latent frames carry role tags (condition / reasoning / target) that survive
every noising and denoising step. Channels can optionally be lifted from Cpix
to a larger C through a fixed orthonormal map, and a spatial_factor of 2
reduces h and w by 2x2 block means (lossy; factor 1 is the default and the
one all exactness guarantees refer to).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

__all__ = [
    "ROLE_CONDITION",
    "ROLE_REASONING",
    "ROLE_TARGET",
    "PixelVideo",
    "LatentVideo",
    "CodecConfig",
    "BlockMeanCodec",
    "latent_frame_count",
]

ROLE_CONDITION = "condition"
ROLE_REASONING = "reasoning"
ROLE_TARGET = "target"

_TEMPORAL_CHUNK = 4
_LIFT_SEED = 0x1F7  # fixed: the lift must be identical across processes


@dataclass(frozen=True)
class PixelVideo:
    """Frame sequence in pixel space: (F, Cpix, H, W), values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.frames, dtype=np.float64)
        if a.ndim != 4:
            raise ValueError(f"pixel video must be (F, C, H, W), got {a.shape}")
        if a.shape[0] < 1:
            raise ValueError("pixel video needs at least one frame")
        object.__setattr__(self, "frames", a)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape


@dataclass(frozen=True)
class LatentVideo:
    """Latent frames (F', C, h, w) with one role tag per frame.

    Exactly one condition frame at index 0; the target frame, when present,
    sits at the final index; anything between is a reasoning frame.
    """

    values: np.ndarray
    roles: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise ValueError(f"latent video must be (F', C, h, w), got {v.shape}")
        roles = tuple(self.roles)
        if len(roles) != v.shape[0]:
            raise ValueError("one role per latent frame required")
        if roles[0] != ROLE_CONDITION or ROLE_CONDITION in roles[1:]:
            raise ValueError("exactly one condition frame, at index 0")
        for i, r in enumerate(roles):
            if r == ROLE_TARGET and i != len(roles) - 1:
                raise ValueError("target frame must occupy the final index")
            if r not in (ROLE_CONDITION, ROLE_REASONING, ROLE_TARGET):
                raise ValueError(f"unknown role {r!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "roles", roles)

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def has_target(self) -> bool:
        return self.roles[-1] == ROLE_TARGET

    def with_values(self, values: np.ndarray) -> "LatentVideo":
        """Same roles, new payload (noising / denoising steps use this)."""
        if np.asarray(values).shape != self.values.shape:
            raise ValueError("replacement values must keep the latent shape")
        return LatentVideo(values, self.roles)


def latent_frame_count(pixel_frames: int) -> int:
    """Latent frames for a conforming pixel frame count: (F - 1)/4 + 1."""
    f = int(pixel_frames)
    if f < 1 or (f - 1) % _TEMPORAL_CHUNK != 0:
        raise ValueError(f"frame count must be 1 mod 4 and >= 1, got {f}")
    return (f - 1) // _TEMPORAL_CHUNK + 1


def _roles_for(n_latent: int) -> tuple[str, ...]:
    if n_latent == 1:
        return (ROLE_CONDITION,)
    return (ROLE_CONDITION,) + (ROLE_REASONING,) * (n_latent - 2) + (ROLE_TARGET,)


def _orthonormal_lift(c_out: int, c_in: int) -> np.ndarray:
    """Fixed seeded matrix with orthonormal columns, (c_out, c_in)."""
    g = Rng(_LIFT_SEED).normal((c_out, c_in))
    q, r = np.linalg.qr(g)
    # fix the sign convention so the lift is unique
    q = q * np.sign(np.diag(r))
    return q[:, :c_in]


@dataclass(frozen=True)
class CodecConfig:
    pixel_channels: int = 3
    latent_channels: int = 3
    spatial_factor: int = 1

    def __post_init__(self):
        if self.spatial_factor not in (1, 2):
            raise ValueError("spatial_factor must be 1 or 2")
        if self.latent_channels < self.pixel_channels:
            raise ValueError("latent channels must be >= pixel channels")


class BlockMeanCodec:
    """First-frame passthrough plus per-chunk temporal means.

    With the default config (no channel lift, spatial_factor 1) the codec is
    lossless on any video whose chunks are constant, and in particular on
    repeat-4 encoded edit targets.
    """

    def __init__(self, config: CodecConfig = CodecConfig()):
        self.config = config
        if config.latent_channels == config.pixel_channels:
            self._lift = None  # identity keeps pair round trips bit-exact
        else:
            self._lift = _orthonormal_lift(config.latent_channels, config.pixel_channels)

    # -- channel / spatial helpers -------------------------------------------

    def _lift_frames(self, frames: np.ndarray) -> np.ndarray:
        f = self.config.spatial_factor
        if f == 2:
            fr, c, h, w = frames.shape
            if h % 2 or w % 2:
                raise ValueError("spatial_factor 2 needs even H and W")
            frames = frames.reshape(fr, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        if self._lift is not None:
            frames = np.einsum("dc,fchw->fdhw", self._lift, frames)
        return frames

    def _project_frames(self, latents: np.ndarray) -> np.ndarray:
        if self._lift is not None:
            latents = np.einsum("cd,fdhw->fchw", self._lift.T, latents)
        if self.config.spatial_factor == 2:
            latents = latents.repeat(2, axis=2).repeat(2, axis=3)
        return latents

    def lift_then_project(self, frame: np.ndarray) -> np.ndarray:
        """Identity up to 1e-12 when a channel lift is configured (orthonormal)."""
        return self._project_frames(self._lift_frames(frame[None]))[0]

    # -- encode / decode -------------------------------------------------------

    def encode_video(self, video: PixelVideo) -> LatentVideo:
        f = video.frame_count
        n_latent = latent_frame_count(f)
        px = video.frames
        if px.shape[1] != self.config.pixel_channels:
            raise ValueError(
                f"expected {self.config.pixel_channels} pixel channels, got {px.shape[1]}"
            )
        first = self._lift_frames(px[:1])
        if n_latent == 1:
            return LatentVideo(first, _roles_for(1))
        chunks = px[1:].reshape(n_latent - 1, _TEMPORAL_CHUNK, *px.shape[1:])
        means = chunks.mean(axis=1)
        rest = self._lift_frames(means)
        return LatentVideo(np.concatenate([first, rest], axis=0), _roles_for(n_latent))

    def encode_pair(self, condition: np.ndarray, target: np.ndarray) -> LatentVideo:
        """Two-frame latent for an edit pair: equals encode_video([c, p, p, p, p])."""
        c = np.asarray(condition, dtype=np.float64)
        p = np.asarray(target, dtype=np.float64)
        if c.shape != p.shape:
            raise ValueError(f"pair frames differ in shape: {c.shape} vs {p.shape}")
        stack = np.concatenate([c[None], np.broadcast_to(p, (_TEMPORAL_CHUNK,) + p.shape)])
        return self.encode_video(PixelVideo(stack))

    def decode(self, z: LatentVideo) -> PixelVideo:
        frames = [self._project_frames(z.values[:1])]
        if z.frame_count > 1:
            rest = self._project_frames(z.values[1:])
            frames.append(rest.repeat(_TEMPORAL_CHUNK, axis=0))
        return PixelVideo(np.concatenate(frames, axis=0))

    def decode_edit(self, z: LatentVideo) -> np.ndarray:
        """Final edited frame: the last decoded pixel frame."""
        if not z.has_target:
            raise ValueError("latent video has no target frame to decode")
        return self.decode(z).frames[-1]
