"""Synthetic ultrasound-like recordings with known latent dynamics.

Each utterance is driven by a smooth latent trajectory z(t) (a seeded sum
of sinusoids per component, normalized to [-1, 1]). The latent controls a
bright ridge in the raw (64 scanlines x 946 samples) echo plane:

    component 1 shifts the ridge depth,
    component 2 tilts it across scanlines,
    component 3 bends it (curvature),
    component 4 modulates its brightness.

The 80 regression targets are fixed random smooth functions of the latent:
a seeded linear map of [z, z^2, pairwise products] squashed through tanh.
Frames and targets are therefore deterministic functions of z, so a capable
model can learn the mapping; intensities are kept inside (0, 255) so the
split-wise min/max statistics stay informative. Speckle noise is bounded
(clipped normal) and scales with ``noise_level``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FRAME_RATE, RAW_SAMPLES, RAW_SCANLINES, RawUtterance, TARGET_DIM
from .errors import ConfigError
from .rng import derive_rng

MAX_LATENT_DIM = 4

_SINES_PER_COMPONENT = 3
_FREQ_RANGE = (0.25, 4.0)  # Hz; fast enough that one-frame shifts matter
_RIDGE_SIGMA = 35.0        # samples; survives the 946 -> 128 downsampling
_DEPTH_BASE = 473.0
_DEPTH_SHIFT = 170.0
_DEPTH_TILT = 120.0
_DEPTH_CURVE = 85.0
_GAIN_BASE = 170.0
_GAIN_MOD = 0.2
_BACKGROUND = 12.0
_NOISE_CLIP = 3.0


@dataclass
class SynthConfig:
    n_utterances: int
    frames_per_utterance: int
    latent_dim: int = 2
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1 or self.frames_per_utterance < 1:
            raise ConfigError("n_utterances and frames_per_utterance must be positive")
        if not 1 <= self.latent_dim <= MAX_LATENT_DIM:
            raise ConfigError(
                f"latent_dim must be in [1, {MAX_LATENT_DIM}] (every latent component "
                f"must be visible in the frames), got {self.latent_dim}"
            )
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")


def _latent_trajectory(cfg: SynthConfig, utt: int) -> np.ndarray:
    """(T, latent_dim) smooth trajectory in [-1, 1]."""
    rng = derive_rng(cfg.seed, "latent", utt)
    t = np.arange(cfg.frames_per_utterance) / FRAME_RATE
    z = np.empty((cfg.frames_per_utterance, cfg.latent_dim), dtype=np.float64)
    for j in range(cfg.latent_dim):
        amps = rng.uniform(0.4, 1.0, _SINES_PER_COMPONENT)
        freqs = rng.uniform(*_FREQ_RANGE, _SINES_PER_COMPONENT)
        phases = rng.uniform(0.0, 2.0 * np.pi, _SINES_PER_COMPONENT)
        wave = sum(a * np.sin(2.0 * np.pi * f * t + p)
                   for a, f, p in zip(amps, freqs, phases))
        z[:, j] = wave / amps.sum()
    return z


def _latent_features(z: np.ndarray) -> np.ndarray:
    """[z, z^2, pairwise products] feature expansion, (T, m)."""
    cols = [z, z * z]
    d = z.shape[1]
    for a in range(d):
        for b in range(a + 1, d):
            cols.append((z[:, a] * z[:, b])[:, None])
    return np.concatenate(cols, axis=1)


def _target_map(cfg: SynthConfig, feature_dim: int) -> np.ndarray:
    """The fixed random (m, 80) linear map shared by all utterances."""
    rng = derive_rng(cfg.seed, "target-map")
    return rng.standard_normal((feature_dim, TARGET_DIM)) / np.sqrt(feature_dim)


def _render_frames(cfg: SynthConfig, utt: int, z: np.ndarray) -> np.ndarray:
    """(T, 64, 946) uint8 frames showing the latent-driven ridge."""
    t_len = len(z)
    scan = (np.arange(RAW_SCANLINES) - (RAW_SCANLINES - 1) / 2) / ((RAW_SCANLINES - 1) / 2)
    zfull = np.zeros((t_len, MAX_LATENT_DIM))
    zfull[:, :cfg.latent_dim] = z

    depth = (_DEPTH_BASE
             + _DEPTH_SHIFT * zfull[:, 0:1]
             + _DEPTH_TILT * zfull[:, 1:2] * scan[None, :]
             + _DEPTH_CURVE * zfull[:, 2:3] * (scan[None, :] ** 2 - 1.0 / 3.0))
    gain = _GAIN_BASE * (1.0 + _GAIN_MOD * zfull[:, 3])

    # static tissue-like background, constant over time (carries no signal)
    sample = np.arange(RAW_SAMPLES, dtype=np.float32)
    bg_rng = derive_rng(cfg.seed, "background", utt)
    phase_s, phase_d = bg_rng.uniform(0.0, 2.0 * np.pi, 2)
    texture = (1.0
               + 0.4 * np.sin(sample[None, :] / 61.0 + phase_d)
               * np.cos(np.arange(RAW_SCANLINES)[:, None] / 9.0 + phase_s))
    img = np.broadcast_to((_BACKGROUND * texture).astype(np.float32),
                          (t_len, RAW_SCANLINES, RAW_SAMPLES)).copy()

    # the ridge is negligible past 4 sigma; evaluate it on a band only
    band = int(8 * _RIDGE_SIGMA)
    offsets = np.arange(band, dtype=np.intp)
    start = np.clip(np.rint(depth).astype(np.intp) - band // 2,
                    0, RAW_SAMPLES - band)
    pos = start[:, :, None] + offsets  # (T, 64, band)
    diff = pos.astype(np.float32) - depth[:, :, None].astype(np.float32)
    ridge = np.exp((-0.5 / _RIDGE_SIGMA**2) * diff * diff, dtype=np.float32)
    ridge *= gain[:, None, None].astype(np.float32)
    ridge += np.take_along_axis(img, pos, axis=2)
    np.put_along_axis(img, pos, ridge, axis=2)

    if cfg.noise_level > 0:
        noise_rng = derive_rng(cfg.seed, "speckle", utt)
        eta = noise_rng.standard_normal(img.shape, dtype=np.float32)
        np.clip(eta, -_NOISE_CLIP, _NOISE_CLIP, out=eta)
        img *= 1.0 + cfg.noise_level * eta

    np.clip(img, 0.0, 255.0, out=img)
    return np.rint(img).astype(np.uint8)


def gen_synthetic(cfg: SynthConfig) -> tuple[list[RawUtterance], list[np.ndarray]]:
    """Deterministic synthetic corpus: (utterances, per-frame target arrays)."""
    utterances = []
    all_targets = []
    wmap = None
    for u in range(cfg.n_utterances):
        z = _latent_trajectory(cfg, u)
        feats = _latent_features(z)
        if wmap is None:
            wmap = _target_map(cfg, feats.shape[1])
        targets = np.tanh(0.8 * (feats @ wmap)).astype(np.float32)
        frames = _render_frames(cfg, u, z)
        utterances.append(RawUtterance(id=f"utt{u:04d}", frames=frames))
        all_targets.append(targets)
    return utterances, all_targets


def ridge_profile(frames: np.ndarray) -> np.ndarray:
    """Intensity-weighted mean ridge depth per frame, in sample units.

    A measurement-side oracle for the synthetic data: with latent_dim=1 and
    no noise it recovers (a monotone function of) the latent trajectory.
    """
    f = frames.astype(np.float64)
    floor = np.median(f, axis=2, keepdims=True)
    w = np.maximum(f - floor, 0.0)
    sample = np.arange(frames.shape[2], dtype=np.float64)
    num = (w * sample).sum(axis=(1, 2))
    den = w.sum(axis=(1, 2))
    return num / np.maximum(den, 1e-9)
