"""Synthetic video generation with exact ground-truth motion.

Videos are T x C x H x W float arrays in [0, 255] intensity units. A scene
is a periodic textured background translating at a fixed velocity plus
optional rectangular textured objects with their own velocities. Integer
velocities make the per-frame warp exact, so the stored flow is exact on
object interiors (and everywhere for pure background scenes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SceneObject:
    """Textured rectangle: top-left position at t=0, size, velocity px/frame."""

    position: tuple[int, int]       # (row, col)
    size: tuple[int, int]           # (height, width)
    velocity: tuple[float, float]   # (vy, vx)


# (block scale, relative amplitude) pairs; the scale-1 octave gives every
# pixel an independent component that spatial context cannot predict
DEFAULT_OCTAVES = ((1, 4.0), (2, 0.5), (4, 1.0), (8, 1.5), (16, 2.0))
# spatially smooth alternative without the per-pixel octave
SMOOTH_OCTAVES = ((2, 0.5), (4, 1.0), (8, 1.5), (16, 2.0))


@dataclass(frozen=True)
class SyntheticScene:
    seed: int = 0
    channels: int = 3
    background_velocity: tuple[float, float] = (0.0, 0.0)
    objects: tuple[SceneObject, ...] = ()
    contrast: float = 80.0   # ~peak-to-peak texture range (std = contrast/4)
    mean_level: float = 128.0
    octaves: tuple[tuple[int, float], ...] = DEFAULT_OCTAVES


def _multiscale_texture(
    rng: np.random.Generator,
    channels: int,
    H: int,
    W: int,
    octaves: tuple[tuple[int, float], ...] = DEFAULT_OCTAVES,
) -> np.ndarray:
    """Periodic multi-scale texture with energy from coarse to fine scales.

    With the default octaves, the scale-1 component gives every pixel an
    independent value that no spatial neighborhood can predict; under
    translation it is recoverable from adjacent frames, which is what makes
    multi-frame denoisers measurably better than single-frame ones on these
    scenes."""
    tex = np.zeros((channels, H, W))
    for scale, amp in octaves:
        h, w = max(H // scale, 1), max(W // scale, 1)
        coarse = rng.standard_normal((channels, h, w))
        # periodic nearest upsampling back to full size
        up = np.repeat(np.repeat(coarse, -(-H // h), axis=1), -(-W // w), axis=2)
        tex += amp * up[:, :H, :W]
    tex -= tex.mean()
    tex /= tex.std()  # unit std; callers scale by contrast/4
    return tex


def _sample_periodic(tex: np.ndarray, dy: int, dx: int) -> np.ndarray:
    return np.roll(tex, shift=(dy, dx), axis=(-2, -1))


def synth_video(
    scene: SyntheticScene, T: int, H: int, W: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render a clean video and its ground-truth flow.

    Returns (video (T, C, H, W), flow (T-1, 2, H, W)) where flow[t, 0] is the
    row displacement and flow[t, 1] the column displacement from frame t to
    frame t+1.
    """
    rng = np.random.default_rng(scene.seed)
    C = scene.channels
    bg_tex = scene.mean_level + 0.25 * scene.contrast * _multiscale_texture(
        rng, C, H, W, scene.octaves
    )
    obj_texs = []
    for obj in scene.objects:
        oh, ow = obj.size
        obj_texs.append(
            scene.mean_level
            + 0.25 * scene.contrast * _multiscale_texture(rng, C, oh, ow, scene.octaves)
        )
        # reject trajectories leaving the frame at build time
        for t in (0, T - 1):
            r = obj.position[0] + t * obj.velocity[0]
            c = obj.position[1] + t * obj.velocity[1]
            if r < 0 or c < 0 or r + oh > H or c + ow > W:
                raise ValueError(
                    f"object trajectory escapes frame at t={t}: ({r}, {c})"
                )

    video = np.empty((T, C, H, W))
    flow = np.zeros((T - 1, 2, H, W)) if T > 1 else np.zeros((0, 2, H, W))
    bvy, bvx = scene.background_velocity
    for t in range(T):
        frame = _sample_periodic(
            bg_tex, int(round(t * bvy)), int(round(t * bvx))
        ).copy()
        for obj, tex in zip(scene.objects, obj_texs):
            oh, ow = obj.size
            r = int(round(obj.position[0] + t * obj.velocity[0]))
            c = int(round(obj.position[1] + t * obj.velocity[1]))
            frame[:, r : r + oh, c : c + ow] = tex
        video[t] = frame
        if t < T - 1:
            flow[t, 0] = bvy
            flow[t, 1] = bvx
            for obj in scene.objects:
                oh, ow = obj.size
                r = int(round(obj.position[0] + t * obj.velocity[0]))
                c = int(round(obj.position[1] + t * obj.velocity[1]))
                flow[t, 0, r : r + oh, c : c + ow] = obj.velocity[0]
                flow[t, 1, r : r + oh, c : c + ow] = obj.velocity[1]
    return video, flow


def add_gaussian_noise(video: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add iid N(0, sigma^2) per pixel, unclipped, deterministic in the seed."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return video.copy()
    rng = np.random.default_rng(seed)
    return video + rng.normal(0.0, sigma, size=video.shape)


def clip_for_display(video: np.ndarray) -> np.ndarray:
    """Explicit post-process for export only; the pipeline never clips."""
    return np.clip(video, 0.0, 255.0)
