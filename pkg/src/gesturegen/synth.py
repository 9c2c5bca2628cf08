"""Procedural speech-gesture corpus with closed-form ground truth.

Desk-scale stand-in for a recorded corpus: each two-second utterance is a
mixture of three amplitude-modulated tones, and the matching pose track is
a known deterministic function of that audio. The loudness envelope raises
the wrists, the amplitude-weighted dominant tone frequency bends the
elbows, and the hands ride on the wrists with constant offsets, so bone
lengths are frame-constant by construction and silence maps to the rest
pose. Because the audio-to-pose map is closed-form, tests can invert it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import quantize_wav_grid
from .pose import REST_ELBOW_BEND_DEG, REST_WRIST_DROP, build_pose

N_TONES = 3
TONE_FREQ_LOW = 220.0
TONE_FREQ_HIGH = 1760.0
WRIST_RAISE_SPAN = 0.6           # envelope 0..1 sweeps the wrist up by this much
ELBOW_BEND_SPAN_DEG = 90.0       # pitch 0..1 sweeps the bend from rest by this much


@dataclass(frozen=True)
class GestureScore:
    """Control curves for one synthetic utterance.

    Three fixed tone frequencies; the loudness envelope and the tone mix
    are slow sine mixtures of time, so both the audio and the derived
    articulation are smooth.
    """

    tone_freqs: np.ndarray
    env_amp: np.ndarray
    env_rate: np.ndarray
    env_phase: np.ndarray
    mix_rate: np.ndarray
    mix_phase: np.ndarray


def draw_score(rng: np.random.Generator) -> GestureScore:
    """One utterance's controls; consumes a fixed number of rng draws."""
    freqs = np.exp(rng.uniform(math.log(TONE_FREQ_LOW), math.log(TONE_FREQ_HIGH), N_TONES))
    return GestureScore(
        tone_freqs=freqs,
        env_amp=rng.uniform(0.18, 0.40, N_TONES),
        env_rate=rng.uniform(0.2, 1.2, N_TONES),
        env_phase=rng.uniform(0.0, 2.0 * math.pi, N_TONES),
        mix_rate=rng.uniform(0.1, 0.8, N_TONES),
        mix_phase=rng.uniform(0.0, 2.0 * math.pi, N_TONES),
    )


def envelope(score: GestureScore, times: np.ndarray) -> np.ndarray:
    """Loudness in [0, 1] at each time; clipping yields silent stretches."""
    t = np.asarray(times, dtype=np.float64)[..., None]
    raw = 0.5 + np.sum(
        score.env_amp * np.sin(2.0 * np.pi * score.env_rate * t + score.env_phase), axis=-1
    )
    return np.clip(raw, 0.0, 1.0)


def tone_weights(score: GestureScore, times: np.ndarray) -> np.ndarray:
    """[..., N_TONES] mixing weights, positive and summing to 1."""
    t = np.asarray(times, dtype=np.float64)[..., None]
    raw = 0.55 + 0.5 * np.sin(2.0 * np.pi * score.mix_rate * t + score.mix_phase)
    return raw / raw.sum(axis=-1, keepdims=True)


def pitch_norm(score: GestureScore, times: np.ndarray) -> np.ndarray:
    """Dominant frequency mapped to [0, 1] over the tone range."""
    w = tone_weights(score, times)
    dominant = w @ score.tone_freqs
    return (dominant - TONE_FREQ_LOW) / (TONE_FREQ_HIGH - TONE_FREQ_LOW)


def render_audio(score: GestureScore, n_samples: int, sample_rate: int) -> np.ndarray:
    """Float32 signal on the 16-bit storage grid (writes losslessly)."""
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    w = tone_weights(score, t)
    tones = np.sin(2.0 * np.pi * t[:, None] * score.tone_freqs)
    signal = envelope(score, t) * np.sum(w * tones, axis=-1)
    return quantize_wav_grid(signal.astype(np.float32))


def articulation(score: GestureScore, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(wrist drop, elbow bend rad) arrays for the given times.

    The bend term carries an envelope factor so that silence leaves the
    whole body at rest: no sound, no pitch, no articulation.
    """
    env = envelope(score, times)
    drop = REST_WRIST_DROP + WRIST_RAISE_SPAN * env
    bend = np.radians(
        REST_ELBOW_BEND_DEG + ELBOW_BEND_SPAN_DEG * env * pitch_norm(score, times)
    )
    return drop, bend


def render_pose(score: GestureScore, n_frames: int, fps: float) -> np.ndarray:
    """[n_frames, 49, 3] float32 pose track sampled at frame times k/fps."""
    times = np.arange(n_frames, dtype=np.float64) / fps
    drop, bend = articulation(score, times)
    return np.stack([build_pose(float(d), float(b)) for d, b in zip(drop, bend)])
