"""Procedural synthetic scenes with exact ground-truth segmentation.

A scene is a flat-colored background plus a list of textured shapes drawn
in declaration order (later objects occlude earlier ones).  Each object's
segment mask is the set of pixels it owns after occlusion, so masks are
pairwise disjoint and, together with the background, cover the canvas.
Everything is a pure function of the scene spec (plus the texture seed for
grain), so renders are bit-identical across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import SALT_SCENE, SALT_TEXTURE, keyed_generator

SHAPES = ("circle", "rectangle", "triangle", "stripe-band")
TEXTURES = ("solid", "stripes", "dots", "checker", "noise-grain")

OBJECT_COLORS = {
    "red": (0.85, 0.13, 0.13),
    "green": (0.15, 0.63, 0.22),
    "blue": (0.16, 0.32, 0.80),
    "yellow": (0.90, 0.84, 0.17),
    "orange": (0.90, 0.55, 0.13),
    "purple": (0.55, 0.20, 0.65),
    "cyan": (0.16, 0.72, 0.72),
}

BACKGROUND_COLORS = {
    "gray": (0.50, 0.50, 0.50),
    "black": (0.10, 0.10, 0.10),
    "white": (0.92, 0.92, 0.92),
}

RECT_ASPECT = 0.6        # half-height / half-width of rectangles
NOISE_GRAIN_AMPLITUDE = 0.06


@dataclass
class SceneObject:
    shape: str
    cx: float
    cy: float
    size: float
    color: str
    texture: str
    orientation_deg: float = 0.0

    def bounding_radius(self) -> float:
        if self.shape == "rectangle":
            return math.hypot(self.size, self.size * RECT_ASPECT)
        return self.size


@dataclass
class SceneSpec:
    width: int = 64
    height: int = 64
    background: str = "gray"
    objects: list[SceneObject] = field(default_factory=list)
    texture_seed: int = 0

    def validate(self) -> None:
        if self.background not in BACKGROUND_COLORS:
            raise ValueError(f"unknown background color {self.background!r}")
        for i, obj in enumerate(self.objects):
            if obj.shape not in SHAPES:
                raise ValueError(f"unknown shape {obj.shape!r}")
            if obj.texture not in TEXTURES:
                raise ValueError(f"unknown texture {obj.texture!r}")
            if obj.color not in OBJECT_COLORS:
                raise ValueError(f"unknown color {obj.color!r}")
            if obj.size <= 0:
                raise ValueError("object size must be positive")
            if obj.shape != "stripe-band":  # bands span the canvas by design
                r = obj.bounding_radius()
                if not (obj.cx - r >= 0 and obj.cx + r <= self.width
                        and obj.cy - r >= 0 and obj.cy + r <= self.height):
                    raise ValueError(f"object {i} extends outside the canvas")


@dataclass
class SegmentRegion:
    """Exact pixel ownership of one object after occlusion."""

    segment_id: int
    mask: np.ndarray
    area: int
    object_index: int


def random_scene_spec(seed: int, canvas: int = 64, min_objects: int = 1,
                      max_objects: int = 4) -> SceneSpec:
    """Deterministic random scene keyed by the seed."""
    if not 0 <= min_objects <= max_objects:
        raise ValueError("need 0 <= min_objects <= max_objects")
    rng = keyed_generator(SALT_SCENE, seed)
    n = int(rng.integers(min_objects, max_objects + 1))
    background = list(BACKGROUND_COLORS)[int(rng.integers(len(BACKGROUND_COLORS)))]
    objects = []
    colors = list(OBJECT_COLORS)
    for _ in range(n):
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        texture = TEXTURES[int(rng.integers(len(TEXTURES)))]
        color = colors[int(rng.integers(len(colors)))]
        if shape == "stripe-band":
            size = float(rng.uniform(3.0, 7.0))
            cx = float(rng.uniform(canvas * 0.25, canvas * 0.75))
            cy = float(rng.uniform(canvas * 0.25, canvas * 0.75))
            orientation = float(rng.uniform(0.0, 90.0))
        else:
            size = float(rng.uniform(canvas * 0.09, canvas * 0.22))
            margin = math.hypot(size, size * RECT_ASPECT) if shape == "rectangle" else size
            cx = float(rng.uniform(margin, canvas - margin))
            cy = float(rng.uniform(margin, canvas - margin))
            orientation = 0.0 if shape == "circle" else float(rng.uniform(0.0, 90.0))
        objects.append(SceneObject(shape=shape, cx=cx, cy=cy, size=size,
                                   color=color, texture=texture,
                                   orientation_deg=orientation))
    return SceneSpec(width=canvas, height=canvas, background=background,
                     objects=objects, texture_seed=seed)


def _shape_mask(obj: SceneObject, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    dx, dy = xx - obj.cx, yy - obj.cy
    theta = math.radians(obj.orientation_deg)
    c, s = math.cos(theta), math.sin(theta)
    if obj.shape == "circle":
        return dx * dx + dy * dy <= obj.size ** 2
    if obj.shape == "rectangle":
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (np.abs(u) <= obj.size) & (np.abs(v) <= obj.size * RECT_ASPECT)
    if obj.shape == "triangle":
        angles = [math.pi / 2 + theta + k * 2 * math.pi / 3 for k in range(3)]
        vx = [obj.cx + obj.size * math.cos(a) for a in angles]
        vy = [obj.cy - obj.size * math.sin(a) for a in angles]
        non_neg = np.ones_like(xx, dtype=bool)
        non_pos = np.ones_like(xx, dtype=bool)
        for k in range(3):
            x1, y1 = vx[k], vy[k]
            x2, y2 = vx[(k + 1) % 3], vy[(k + 1) % 3]
            cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
            non_neg &= cross >= 0
            non_pos &= cross <= 0
        return non_neg | non_pos
    # stripe-band: all pixels within `size` of the band's center line
    dist = np.abs(-s * dx + c * dy)
    return dist <= obj.size


def _texture_fill(obj: SceneObject, obj_index: int, xx: np.ndarray,
                  yy: np.ndarray, texture_seed: int) -> np.ndarray:
    base = np.array(OBJECT_COLORS[obj.color])
    h, w = xx.shape
    img = np.broadcast_to(base, (h, w, 3)).copy()
    theta = math.radians(obj.orientation_deg)
    if obj.texture == "stripes":
        coord = math.cos(theta) * xx + math.sin(theta) * yy
        dark = (np.floor(coord / 4.0).astype(int) % 2) == 1
        img[dark] = base * 0.55
    elif obj.texture == "dots":
        dark = ((xx % 5.0) - 2.5) ** 2 + ((yy % 5.0) - 2.5) ** 2 <= 1.5 ** 2
        img[dark] = base * 0.45
    elif obj.texture == "checker":
        dark = ((np.floor(xx / 4.0) + np.floor(yy / 4.0)).astype(int) % 2) == 1
        img[dark] = base * 0.50
    elif obj.texture == "noise-grain":
        rng = keyed_generator(SALT_TEXTURE, texture_seed, obj_index)
        img += NOISE_GRAIN_AMPLITUDE * rng.uniform(-1.0, 1.0, size=(h, w, 3))
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec_or_seed) -> tuple[np.ndarray, list[SegmentRegion]]:
    """Render an HR image in [0, 1] plus one exact SegmentRegion per object."""
    spec = (random_scene_spec(spec_or_seed) if isinstance(spec_or_seed, (int, np.integer))
            else spec_or_seed)
    spec.validate()
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    image = np.broadcast_to(np.array(BACKGROUND_COLORS[spec.background]),
                            (spec.height, spec.width, 3)).copy()
    owner = np.full((spec.height, spec.width), -1, dtype=int)
    for idx, obj in enumerate(spec.objects):
        mask = _shape_mask(obj, xx, yy)
        image[mask] = _texture_fill(obj, idx, xx, yy, spec.texture_seed)[mask]
        owner[mask] = idx
    regions = []
    for idx in range(len(spec.objects)):
        mask = owner == idx
        regions.append(SegmentRegion(segment_id=idx, mask=mask,
                                     area=int(mask.sum()), object_index=idx))
    return image, regions
