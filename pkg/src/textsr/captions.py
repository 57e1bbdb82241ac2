"""Rule-based disentangled captions for synthetic scenes.

Three caption kinds are generated from scene ground truth:

* global - object count, spatial arrangement, background color;
* low-frequency (one per object) - size, color, orientation, shape, and
  nothing else;
* high-frequency (one per object) - texture, surface, and edge character,
  and nothing else.

The LF and HF templates draw from disjoint word sets (including articles
and connectives), which keeps the two frequency bands separable at the
token level.  ``lf_vocabulary()`` / ``hf_vocabulary()`` expose the full
producible word sets so the disjointness can be asserted over any corpus.

Caption corruption replaces whitespace tokens with the literal token
"None", each independently with probability p, from a stream keyed by
(seed, caption index); caption index 0 is the global caption, then the LF
captions in order, then the HF captions.
"""

from __future__ import annotations

from .priors import CaptionSet
from .rng import SALT_CORRUPT, keyed_generator
from .scenes import SceneSpec, SegmentRegion

SIZE_WORDS = ("small", "medium", "large")
ORIENTATION_WORDS = ("upright", "tilted")
SHAPE_WORDS = {"circle": "circle", "rectangle": "rectangle",
               "triangle": "triangle", "stripe-band": "band"}

HF_TEMPLATES = {
    "solid": "smooth solid surface finish and soft even edges",
    "stripes": "striped texture of crisp parallel lines and sharp edges",
    "dots": "dotted texture of evenly spaced speckles and clean edges",
    "checker": "checkered texture of alternating cells and hard edges",
    "noise-grain": "grainy speckled texture and rough irregular edges",
}

CORRUPTION_TOKEN = "None"


def lf_vocabulary() -> frozenset[str]:
    from .scenes import OBJECT_COLORS
    words = {"a"} | set(SIZE_WORDS) | set(ORIENTATION_WORDS)
    words |= set(SHAPE_WORDS.values()) | set(OBJECT_COLORS)
    return frozenset(words)


def hf_vocabulary() -> frozenset[str]:
    words: set[str] = set()
    for template in HF_TEMPLATES.values():
        words |= set(template.split())
    return frozenset(words)


def _size_word(area: int, canvas_pixels: int) -> str:
    frac = area / canvas_pixels
    if frac < 0.02:
        return "small"
    if frac < 0.06:
        return "medium"
    return "large"


def _orientation_word(obj) -> str:
    if obj.shape == "circle":
        return "upright"
    deg = obj.orientation_deg % 90.0
    return "upright" if deg < 15.0 or deg >= 75.0 else "tilted"


def _location_word(cx: float, cy: float, width: int, height: int) -> str:
    col = ("left", "center", "right")[min(int(3 * cx / width), 2)]
    row = ("top", "middle", "bottom")[min(int(3 * cy / height), 2)]
    if row == "middle" and col == "center":
        return "center"
    return f"{row} {col}"


def _arrangement(spec: SceneSpec) -> str:
    xs = [o.cx for o in spec.objects]
    ys = [o.cy for o in spec.objects]
    if max(ys) - min(ys) <= spec.height / 8:
        return "in a horizontal row"
    if max(xs) - min(xs) <= spec.width / 8:
        return "in a vertical column"
    span = max(max(xs) - min(xs), max(ys) - min(ys))
    if span <= 0.45 * max(spec.width, spec.height):
        return "in a tight cluster"
    return "loosely scattered"


def global_caption(spec: SceneSpec) -> str:
    n = len(spec.objects)
    head = f"a plain {spec.background} background with {n} object"
    if n == 0:
        return head + "s"
    if n == 1:
        obj = spec.objects[0]
        loc = _location_word(obj.cx, obj.cy, spec.width, spec.height)
        return head + f" near the {loc}"
    return head + f"s arranged {_arrangement(spec)}"


def lf_caption(obj, area: int, canvas_pixels: int) -> str:
    return (f"a {_size_word(area, canvas_pixels)} {obj.color} "
            f"{_orientation_word(obj)} {SHAPE_WORDS[obj.shape]}")


def hf_caption(obj) -> str:
    return HF_TEMPLATES[obj.texture]


def caption_scene(spec: SceneSpec, regions: list[SegmentRegion]) -> CaptionSet:
    """Captions for every region, aligned with region order."""
    if len(regions) != len(spec.objects):
        raise ValueError("regions must correspond one-to-one with scene objects")
    canvas_pixels = spec.width * spec.height
    lf, hf = [], []
    for region in regions:
        obj = spec.objects[region.object_index]
        lf.append(lf_caption(obj, region.area, canvas_pixels))
        hf.append(hf_caption(obj))
    return CaptionSet(global_caption=global_caption(spec), lf_captions=lf,
                      hf_captions=hf)


def mixed_captions(captions: CaptionSet) -> list[str]:
    """Single-sentence merge of each object's LF and HF captions (the
    entangled-prior variant used by the frequency-mixing comparison)."""
    return [f"{lf} with {hf}"
            for lf, hf in zip(captions.lf_captions, captions.hf_captions)]


def _corrupt_text(text: str, p: float, rng) -> str:
    tokens = text.split()
    draws = rng.random(len(tokens))
    return " ".join(CORRUPTION_TOKEN if d < p else tok
                    for tok, d in zip(tokens, draws))


def corrupt_captions(captions: CaptionSet, p: float, seed: int) -> CaptionSet:
    """Token-level "None" substitution with probability p per token.

    Caption index i uses the stream keyed by (seed, i): the global caption
    is index 0, LF captions follow, then HF captions.  Counts and ordering
    are preserved.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    texts = [captions.global_caption] + list(captions.lf_captions) + list(captions.hf_captions)
    out = [_corrupt_text(t, p, keyed_generator(SALT_CORRUPT, seed, i))
           for i, t in enumerate(texts)]
    n = captions.n
    return CaptionSet(global_caption=out[0], lf_captions=out[1:1 + n],
                      hf_captions=out[1 + n:])
