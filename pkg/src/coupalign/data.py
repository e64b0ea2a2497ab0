"""Synthetic referring-segmentation benchmark.

Scenes of hard-edged circles, squares and triangles on a uniform
background, each paired with a compositional referring expression that
uniquely identifies one object, and an exact binary mask of that object's
visible pixels. Generation is deterministic per (seed, index); overlaps
draw in z-order and occluded pixels are excluded from masks.

Expression templates:
    <color> <shape>                         "red circle"
    <size> <color> <shape>                  "small blue square"
    <shape> <position>                      "triangle bottom"  (extremal)
    the <ordinal> [<color>] <shape> from <position>
                                            "the second red circle from left"

Ordinal and extremal readings sort object centers along the named axis,
ties broken by the perpendicular coordinate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coupalign.catn import CatnFormatError, load_tensors, save_tensors
from coupalign.tensor import InputError

GENERATOR_VERSION = 1

PAD, CLS = "<pad>", "<cls>"
COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "large")
POSITIONS = ("left", "right", "top", "bottom")
ORDINALS = ("first", "second", "third", "fourth")
RELATIONS = ("from", "the")

VOCAB: dict[str, int] = {}
for _w in (PAD, CLS, *COLORS, *SHAPES, *SIZES, *POSITIONS, *ORDINALS, *RELATIONS):
    VOCAB[_w] = len(VOCAB)
ID_TO_WORD = {i: w for w, i in VOCAB.items()}

COLOR_RGB = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.90),
    "yellow": (0.95, 0.90, 0.20),
    "purple": (0.60, 0.20, 0.80),
    "orange": (0.95, 0.55, 0.10),
}
BACKGROUND = (0.08, 0.08, 0.10)


def vocab_hash() -> str:
    text = "\n".join(f"{i}\t{ID_TO_WORD[i]}" for i in sorted(ID_TO_WORD))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# scene objects and rasterization


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    cx: int
    cy: int
    r: int    # half extent in pixels

    def descriptor(self) -> dict:
        return {"shape": self.shape, "color": self.color, "size": self.size,
                "cx": self.cx, "cy": self.cy, "r": self.r}


def rasterize(obj: SceneObject, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if obj.shape == "circle":
        return (xx - obj.cx) ** 2 + (yy - obj.cy) ** 2 <= obj.r ** 2
    if obj.shape == "square":
        return (np.abs(xx - obj.cx) <= obj.r) & (np.abs(yy - obj.cy) <= obj.r)
    if obj.shape == "triangle":
        # upright triangle: apex (cx, cy-r), base corners (cx -+ r, cy+r)
        t = yy - (obj.cy - obj.r)
        return (t >= 0) & (yy <= obj.cy + obj.r) & (np.abs(xx - obj.cx) * 2 <= t)
    raise ValueError(f"unknown shape {obj.shape!r}")


def render_scene(objects, h: int, w: int):
    """Paint objects in list (z) order; returns (image, per-object visible masks)."""
    image = np.empty((h, w, 3), dtype=np.float32)
    image[:] = BACKGROUND
    rasters = [rasterize(o, h, w) for o in objects]
    visible = []
    for i, (obj, ras) in enumerate(zip(objects, rasters)):
        vis = ras.copy()
        for later in rasters[i + 1:]:
            vis &= ~later
        visible.append(vis)
        image[ras] = COLOR_RGB[obj.color]
    return image, visible


# ---------------------------------------------------------------------------
# expressions and their predicate semantics


def _axis_key(position: str):
    """(primary coordinate fn, ascending?, perpendicular fn) for a direction."""
    if position == "left":
        return (lambda o: o.cx), True, (lambda o: o.cy)
    if position == "right":
        return (lambda o: o.cx), False, (lambda o: o.cy)
    if position == "top":
        return (lambda o: o.cy), True, (lambda o: o.cx)
    if position == "bottom":
        return (lambda o: o.cy), False, (lambda o: o.cx)
    raise ValueError(position)


def _ranked(cands, position: str):
    primary, ascending, perp = _axis_key(position)
    sign = 1 if ascending else -1
    return sorted(cands, key=lambda o: (sign * primary(o), perp(o)))


def matching_objects(expr: dict, objects) -> list:
    """All objects satisfying the expression's predicate.

    This is the uniqueness oracle: a well-formed expression matches
    exactly one object.
    """
    kind = expr["kind"]
    if kind == "color_shape":
        return [o for o in objects if o.color == expr["color"] and o.shape == expr["shape"]]
    if kind == "size_color_shape":
        return [o for o in objects
                if o.size == expr["size"] and o.color == expr["color"] and o.shape == expr["shape"]]
    if kind == "shape_position":
        cands = [o for o in objects if o.shape == expr["shape"]]
        return _ranked(cands, expr["position"])[:1] if cands else []
    if kind == "ordinal":
        cands = [o for o in objects if o.shape == expr["shape"]]
        if expr.get("color"):
            cands = [o for o in cands if o.color == expr["color"]]
        rank = ORDINALS.index(expr["ordinal"])
        ranked = _ranked(cands, expr["position"])
        return [ranked[rank]] if rank < len(ranked) else []
    raise ValueError(f"unknown expression kind {kind!r}")


def expression_words(expr: dict) -> list:
    kind = expr["kind"]
    if kind == "color_shape":
        return [expr["color"], expr["shape"]]
    if kind == "size_color_shape":
        return [expr["size"], expr["color"], expr["shape"]]
    if kind == "shape_position":
        return [expr["shape"], expr["position"]]
    if kind == "ordinal":
        words = ["the", expr["ordinal"]]
        if expr.get("color"):
            words.append(expr["color"])
        words += [expr["shape"], "from", expr["position"]]
        return words
    raise ValueError(kind)


def tokenize(words, t_max: int = 16) -> np.ndarray:
    """[CLS] + word ids, padded with id 0 to t_max."""
    ids = [VOCAB[CLS]]
    for w in words:
        if w not in VOCAB:
            raise InputError(f"unknown word {w!r}")
        ids.append(VOCAB[w])
    if len(ids) > t_max:
        raise InputError(f"expression too long: {len(ids)} > t_max={t_max}")
    ids += [VOCAB[PAD]] * (t_max - len(ids))
    return np.asarray(ids, dtype=np.int64)


def detokenize(ids) -> list:
    return [ID_TO_WORD[int(i)] for i in ids
            if int(i) not in (VOCAB[PAD], VOCAB[CLS])]


# ---------------------------------------------------------------------------
# sample generation


@dataclass
class Sample:
    image: np.ndarray          # [H,W,3] float32 in [0,1]
    tokens: np.ndarray         # [t_max] int64, CLS first, 0-padded
    mask: np.ndarray           # [H,W] uint8
    meta: dict | None = None


def _sample_objects(rng, h: int, w: int):
    n = int(rng.integers(2, 7))
    shapes = [SHAPES[rng.integers(len(SHAPES))] for _ in range(n)]
    # guarantee at least one crowded class
    if len(set(shapes)) == len(shapes):
        shapes[int(rng.integers(1, n))] = shapes[0]
    # radii comfortably above the mask-grid resolution floor (H/4 cells)
    r_small = (max(3, round(h * 5 / 64)), max(4, round(h * 7 / 64)))
    r_large = (max(5, round(h * 9 / 64)), max(6, round(h * 12 / 64)))
    objects = []
    for shape in shapes:
        size = SIZES[int(rng.integers(2))]
        lo, hi = r_small if size == "small" else r_large
        r = int(rng.integers(lo, hi + 1))
        cx = int(rng.integers(r + 1, w - r - 1))
        cy = int(rng.integers(r + 1, h - r - 1))
        objects.append(SceneObject(shape, COLORS[int(rng.integers(len(COLORS)))], size, cx, cy, r))
    return objects


def _candidate_expressions(objects, rng):
    """Expressions of every kind that are uniquely satisfied, shuffled
    within kind, ordinal/crowded kinds first with probability 0.75."""
    by_cs = {}
    by_scs = {}
    shape_counts = {}
    for o in objects:
        by_cs.setdefault((o.color, o.shape), []).append(o)
        by_scs.setdefault((o.size, o.color, o.shape), []).append(o)
        shape_counts[o.shape] = shape_counts.get(o.shape, 0) + 1

    plain = [{"kind": "color_shape", "color": c, "shape": s}
             for (c, s), objs in by_cs.items() if len(objs) == 1]
    sized = [{"kind": "size_color_shape", "size": z, "color": c, "shape": s}
             for (z, c, s), objs in by_scs.items() if len(objs) == 1]
    positional = [{"kind": "shape_position", "shape": s, "position": p}
                  for s, cnt in shape_counts.items() if cnt >= 2 for p in POSITIONS]
    ordinal = []
    for s, cnt in shape_counts.items():
        if cnt < 2:
            continue
        for p in POSITIONS:
            for k in range(min(cnt, len(ORDINALS))):
                ordinal.append({"kind": "ordinal", "ordinal": ORDINALS[k],
                                "shape": s, "position": p, "color": None})
    for (c, s), objs in by_cs.items():
        if len(objs) < 2:
            continue
        for p in POSITIONS:
            for k in range(min(len(objs), len(ORDINALS))):
                ordinal.append({"kind": "ordinal", "ordinal": ORDINALS[k],
                                "shape": s, "position": p, "color": c})

    pools = [plain, sized, positional, ordinal]
    weights = np.array([0.40, 0.20, 0.15, 0.25])
    alive = [i for i, pool in enumerate(pools) if pool]
    if not alive:
        return None
    w = weights[alive] / weights[alive].sum()
    pick = alive[int(rng.choice(len(alive), p=w))]
    pool = pools[pick]
    # bias toward referents whose shape class is crowded
    crowded = [e for e in pool if shape_counts.get(e["shape"], 0) >= 2]
    if crowded and rng.random() < 0.75:
        pool = crowded
    return pool[int(rng.integers(len(pool)))]


def generate_sample(seed: int, index: int, h: int = 64, w: int = 64,
                    t_max: int = 16, max_retries: int = 64) -> Sample:
    """Deterministic sample for (seed, index); the per-sample PRNG stream
    is keyed by seed XOR index."""
    rng = np.random.default_rng(int(seed) ^ int(index))
    for _attempt in range(max_retries):
        objects = _sample_objects(rng, h, w)
        image, visible = render_scene(objects, h, w)
        # every object must stay mostly visible so geometry words stay grounded
        ok = True
        for obj, vis in zip(objects, visible):
            area = int(rasterize(obj, h, w).sum())
            if area == 0 or vis.sum() < max(12, 0.5 * area):
                ok = False
                break
        if not ok:
            continue
        expr = _candidate_expressions(objects, rng)
        if expr is None:
            continue
        matches = matching_objects(expr, objects)
        if len(matches) != 1:
            continue
        referent = matches[0]
        ref_idx = next(i for i, o in enumerate(objects) if o is referent)
        mask = visible[ref_idx].astype(np.uint8)
        ranked_x = sorted(objects, key=lambda o: (o.cx, o.cy))
        meta = {
            "expr": expr,
            "words": expression_words(expr),
            "objects": [o.descriptor() for o in objects],
            "referent_index": ref_idx,
            "referent": referent.descriptor(),
            "x_rank": ranked_x.index(referent),
            "shape_crowded": sum(o.shape == referent.shape for o in objects) >= 2,
        }
        return Sample(image=image, tokens=tokenize(meta["words"], t_max), mask=mask, meta=meta)
    raise InputError(f"no satisfiable scene for seed={seed} index={index} "
                     f"after {max_retries} retries")


def generate(seed: int, n_samples: int, h: int = 64, w: int = 64,
             t_max: int = 16, index_base: int = 0) -> list:
    return [generate_sample(seed, index_base + i, h, w, t_max) for i in range(n_samples)]


# split index bases keep the three splits on disjoint per-sample streams
SPLIT_BASES = {"train": 0, "val": 1_000_000, "test": 2_000_000}


# ---------------------------------------------------------------------------
# on-disk dataset


def save_dataset(samples, out_dir) -> None:
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        save_tensors(out / "samples" / f"{i}.catn", {
            "image": s.image.astype(np.float32),
            "mask": s.mask.astype(np.float32),
            "tokens": s.tokens.astype(np.float32),
        })
    h, w, _ = samples[0].image.shape
    manifest = (
        f"count = {len(samples)}\n"
        f"height = {h}\n"
        f"width = {w}\n"
        f"t_max = {len(samples[0].tokens)}\n"
        f"vocab_hash = {vocab_hash()}\n"
        f"generator_version = {GENERATOR_VERSION}\n"
    )
    (out / "manifest.txt").write_text(manifest, encoding="utf-8")


def load_dataset(path) -> list:
    root = Path(path)
    mf = root / "manifest.txt"
    if not mf.exists():
        raise CatnFormatError(f"missing manifest: {mf}")
    info = {}
    for line in mf.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            info[k.strip()] = v.strip()
    if int(info.get("generator_version", -1)) != GENERATOR_VERSION:
        raise CatnFormatError(f"unsupported generator version {info.get('generator_version')}")
    samples = []
    for i in range(int(info["count"])):
        f = root / "samples" / f"{i}.catn"
        if not f.exists():
            raise CatnFormatError(f"missing sample file {f}")
        t = load_tensors(f)
        samples.append(Sample(
            image=t["image"].astype(np.float32),
            tokens=t["tokens"].astype(np.int64),
            mask=t["mask"].astype(np.uint8),
        ))
    return samples
