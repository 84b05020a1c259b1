"""Deterministic synthetic referring-segmentation scenes.

Each sample is a small textured canvas with a handful of colored shapes
and a short token expression (optional spatial/size relation, color,
shape) that identifies exactly one of them. Scenes are engineered around
three difficulty sources: distractors sharing color or shape with the
referent, small targets, and thin bars whose masks are boundary-dominated.

Generation is a pure function of (config, seed). Splits are described by
manifests that store seeds and expression metadata only; pixels are
regenerated on load.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .seeding import stable_seed

logger = logging.getLogger(__name__)

PAD_ID = 0
COLOR_NAMES = ("red", "green", "blue", "yellow", "cyan", "magenta")
SHAPE_NAMES = ("disk", "rectangle", "bar", "ell")
RELATION_NAMES = ("leftmost", "rightmost", "topmost", "bottommost", "largest", "smallest")

VOCAB: dict[str, int] = {"<pad>": PAD_ID}
for _name in COLOR_NAMES + SHAPE_NAMES + RELATION_NAMES:
    VOCAB[_name] = len(VOCAB)
VOCAB_SIZE = len(VOCAB)

_PALETTE = {
    "red": (0.85, 0.16, 0.16),
    "green": (0.18, 0.72, 0.22),
    "blue": (0.22, 0.32, 0.85),
    "yellow": (0.88, 0.83, 0.20),
    "cyan": (0.20, 0.78, 0.78),
    "magenta": (0.80, 0.22, 0.78),
}

# Uniqueness margins between the referent and the runner-up of its
# attribute group; shared by the generator and the resolver.
POSITION_MARGIN = 3.0
AREA_RATIO_MARGIN = 1.3

_SCENE_ATTEMPTS = 30
_RESEED_ROUNDS = 8
_SPLIT_OFFSETS = {"train": 0, "val": 10_000_000, "test": 20_000_000}


@dataclass(frozen=True)
class SceneConfig:
    """Geometry and sampling knobs of the synthetic scenes."""

    canvas: int = 64
    min_distractors: int = 2
    max_distractors: int = 3
    min_target_area: int = 12
    text_len: int = 12
    supersample: int = 4
    colors: tuple[str, ...] = COLOR_NAMES
    shapes: tuple[str, ...] = SHAPE_NAMES
    texture_amp: float = 0.015
    grain_std: float = 0.006
    color_jitter: float = 0.01

    def __post_init__(self) -> None:
        if self.canvas % 32 != 0:
            raise ValueError(f"canvas must be divisible by 32, got {self.canvas}")
        if self.min_distractors < 0 or self.max_distractors < self.min_distractors:
            raise ValueError("invalid distractor range")
        if self.text_len < 3:
            raise ValueError("text_len must hold relation+color+shape")
        if not set(self.colors) <= set(COLOR_NAMES) or not set(self.shapes) <= set(SHAPE_NAMES):
            raise ValueError("unknown color or shape name")


@dataclass
class SceneObject:
    color: str
    shape: str
    coverage: np.ndarray  # (H, W) float in [0, 1]
    mask: np.ndarray = field(init=False)  # coverage >= 0.5
    area: int = field(init=False)
    centroid: tuple[float, float] = field(init=False)  # (x, y)

    def __post_init__(self) -> None:
        self.mask = self.coverage >= 0.5
        self.area = int(self.mask.sum())
        ys, xs = np.nonzero(self.mask)
        if self.area > 0:
            self.centroid = (float(xs.mean()), float(ys.mean()))
        else:
            self.centroid = (0.0, 0.0)


@dataclass
class SampleRecord:
    """One generated sample plus the metadata needed to audit it."""

    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    token_ids: np.ndarray  # (L,) int64
    mask: np.ndarray  # (H, W) bool
    seed: int
    color: str
    shape: str
    relation: str | None
    objects: list[SceneObject]
    target_index: int


def encode_expression(
    color: str, shape: str, relation: str | None, length: int
) -> np.ndarray:
    words = ([relation] if relation else []) + [color, shape]
    ids = [VOCAB[w] for w in words]
    if len(ids) > length:
        raise ValueError("expression longer than text_len")
    return np.array(ids + [PAD_ID] * (length - len(ids)), dtype=np.int64)


def _subpixel_grid(canvas: int, ss: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(canvas * ss, dtype=np.float64) + 0.5) / ss
    return np.meshgrid(coords, coords, indexing="xy")


def _coverage(occupancy: np.ndarray, canvas: int, ss: int) -> np.ndarray:
    return occupancy.reshape(canvas, ss, canvas, ss).mean(axis=(1, 3))


def _raster(cfg: SceneConfig, shape: str, params: dict) -> np.ndarray:
    xs, ys = _subpixel_grid(cfg.canvas, cfg.supersample)
    if shape == "disk":
        occ = (xs - params["cx"]) ** 2 + (ys - params["cy"]) ** 2 <= params["r"] ** 2
    elif shape == "rectangle":
        occ = (
            (xs >= params["x0"])
            & (xs < params["x0"] + params["w"])
            & (ys >= params["y0"])
            & (ys < params["y0"] + params["h"])
        )
    elif shape == "bar":
        dx = xs - params["cx"]
        dy = ys - params["cy"]
        cos, sin = np.cos(params["angle"]), np.sin(params["angle"])
        along = dx * cos + dy * sin
        across = -dx * sin + dy * cos
        occ = (np.abs(along) <= params["length"] / 2) & (np.abs(across) <= params["width"] / 2)
    elif shape == "ell":
        x0, y0 = params["x0"], params["y0"]
        vert = (xs >= x0) & (xs < x0 + params["thick"]) & (ys >= y0) & (ys < y0 + params["arm_v"])
        horz = (xs >= x0) & (xs < x0 + params["arm_h"]) & (ys >= y0) & (ys < y0 + params["thick"])
        occ = vert | horz
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return _coverage(occ, cfg.canvas, cfg.supersample)


def _sample_geometry(cfg: SceneConfig, shape: str, rng: np.random.Generator) -> tuple[dict, float]:
    """Shape parameters (without position) and the bbox half-extent.

    Sizes come from small discrete inventories (positions stay continuous):
    a 600-sample split then covers the shape bank densely, and the discrete
    sizes keep a clean margin for the largest/smallest relations.
    """
    if shape == "disk":
        r = float(rng.choice((4.0, 5.0, 6.0)))
        return {"r": r}, r
    if shape == "rectangle":
        # oblong or large: small squares read as disks at this scale
        w, h = (float(v) for v in rng.choice(((6, 10), (10, 6), (8, 13), (13, 8), (12, 12))))
        return {"w": w, "h": h}, max(w, h) / 2
    if shape == "bar":
        length = float(rng.choice((16.0, 22.0)))
        width = 2.5
        angle = np.deg2rad(float(rng.choice((0.0, 45.0, 90.0, 135.0))))
        return {"length": length, "width": width, "angle": angle}, length / 2
    if shape == "ell":
        arm_v = float(rng.choice((10.0, 14.0)))
        arm_h = float(rng.choice((10.0, 14.0)))
        thick = 3.5
        return {"arm_v": arm_v, "arm_h": arm_h, "thick": thick}, max(arm_v, arm_h) / 2
    raise ValueError(f"unknown shape {shape!r}")


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def _boxes_clash(a: tuple[int, int, int, int], b: tuple[int, int, int, int], gap: int = 2) -> bool:
    return not (
        a[2] + gap < b[0] or b[2] + gap < a[0] or a[3] + gap < b[1] or b[3] + gap < a[1]
    )


def _place_object(
    cfg: SceneConfig,
    color: str,
    shape: str,
    rng: np.random.Generator,
    placed: list[SceneObject],
) -> SceneObject | None:
    geom, half = _sample_geometry(cfg, shape, rng)
    margin = int(np.ceil(half)) + 2
    if margin * 2 >= cfg.canvas:
        return None
    for _ in range(40):
        # integer centers: every placement of a given shape is an exact
        # pixel translate, so its boundary blend pattern recurs verbatim
        cx = float(rng.integers(margin, cfg.canvas - margin + 1))
        cy = float(rng.integers(margin, cfg.canvas - margin + 1))
        params = dict(geom)
        if shape == "disk" or shape == "bar":
            params.update(cx=cx, cy=cy)
        elif shape == "rectangle":
            params.update(x0=cx - geom["w"] / 2, y0=cy - geom["h"] / 2)
        else:  # ell
            params.update(x0=cx - half, y0=cy - half)
        obj = SceneObject(color, shape, _raster(cfg, shape, params))
        if obj.area < 4:
            continue
        box = _bbox(obj.mask)
        if any(_boxes_clash(box, _bbox(p.mask)) for p in placed):
            continue
        return obj
    return None


def resolve_expression(
    objects: list[SceneObject], color: str, shape: str, relation: str | None
) -> int | None:
    """Return the index the expression denotes, or None when ambiguous.

    Attribute-only expressions require a single (color, shape) match.
    Relations order the matching group by centroid or area and demand the
    winner beat the runner-up by the module-level margins.
    """
    matches = [i for i, o in enumerate(objects) if o.color == color and o.shape == shape]
    if not matches:
        return None
    if relation is None:
        return matches[0] if len(matches) == 1 else None
    if len(matches) == 1:
        return matches[0]

    if relation in ("leftmost", "rightmost"):
        keys = {i: objects[i].centroid[0] for i in matches}
    elif relation in ("topmost", "bottommost"):
        keys = {i: objects[i].centroid[1] for i in matches}
    else:
        keys = {i: float(objects[i].area) for i in matches}
    reverse = relation in ("rightmost", "bottommost", "largest")
    ordered = sorted(matches, key=lambda i: keys[i], reverse=reverse)
    best, runner = ordered[0], ordered[1]
    if relation in ("largest", "smallest"):
        hi, lo = max(keys[best], keys[runner]), min(keys[best], keys[runner])
        if lo <= 0 or hi / lo < AREA_RATIO_MARGIN:
            return None
    else:
        if abs(keys[best] - keys[runner]) < POSITION_MARGIN:
            return None
    return best


def _other(pool: tuple[str, ...], avoid: str, rng: np.random.Generator) -> str:
    choices = [p for p in pool if p != avoid]
    return str(rng.choice(choices))


def _compose_objects(
    cfg: SceneConfig,
    rng: np.random.Generator,
    color: str,
    shape: str,
    relation: str | None,
) -> tuple[list[SceneObject], int] | None:
    n_distractors = int(rng.integers(cfg.min_distractors, cfg.max_distractors + 1))
    objects: list[SceneObject] = []

    if relation is not None:
        n_group = 2 if n_distractors < 3 else int(rng.integers(2, 4))
        n_group = min(n_group, n_distractors + 1)
        for _ in range(n_group):
            obj = _place_object(cfg, color, shape, rng, objects)
            if obj is None:
                return None
            objects.append(obj)
        for _ in range(n_distractors + 1 - n_group):
            # other objects never match both attributes, so the relation
            # group stays exactly the one built above
            if rng.random() < 0.5:
                c, s = _other(cfg.colors, color, rng), str(rng.choice(cfg.shapes))
            else:
                c, s = str(rng.choice(cfg.colors)), _other(cfg.shapes, shape, rng)
            obj = _place_object(cfg, c, s, rng, objects)
            if obj is None:
                return None
            objects.append(obj)
        target = resolve_expression(objects, color, shape, relation)
        if target is None or objects[target].area < cfg.min_target_area:
            return None
        return objects, target

    target_obj = _place_object(cfg, color, shape, rng, objects)
    if target_obj is None or target_obj.area < cfg.min_target_area:
        return None
    objects.append(target_obj)
    for k in range(n_distractors):
        if k == 0:
            c, s = color, _other(cfg.shapes, shape, rng)  # same color, other shape
        elif k == 1:
            c, s = _other(cfg.colors, color, rng), shape  # same shape, other color
        elif rng.random() < 0.5:
            c, s = color, _other(cfg.shapes, shape, rng)
        else:
            c, s = _other(cfg.colors, color, rng), _other(cfg.shapes, shape, rng)
        obj = _place_object(cfg, c, s, rng, objects)
        if obj is None:
            return None
        objects.append(obj)
    return objects, 0


def _np_box_blur(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out / 9.0


def _render(cfg: SceneConfig, rng: np.random.Generator, objects: list[SceneObject]) -> np.ndarray:
    n = cfg.canvas
    base = 0.28 + rng.uniform(0.0, 0.06)
    tint = rng.uniform(-0.02, 0.02, size=3)
    coarse = rng.uniform(-cfg.texture_amp, cfg.texture_amp, size=(n // 8, n // 8))
    texture = _np_box_blur(_np_box_blur(np.kron(coarse, np.ones((8, 8)))))
    grain = rng.normal(0.0, cfg.grain_std, size=(n, n))
    img = np.empty((3, n, n), dtype=np.float64)
    for c in range(3):
        img[c] = base + tint[c] + texture + grain
    for obj in objects:
        jitter = rng.uniform(-cfg.color_jitter, cfg.color_jitter)
        rgb = np.clip(np.array(_PALETTE[obj.color]) + jitter, 0.0, 1.0)
        cov = obj.coverage
        for c in range(3):
            img[c] = img[c] * (1.0 - cov) + rgb[c] * cov
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_scene(cfg: SceneConfig, seed: int) -> SampleRecord:
    """Generate one sample; a pure function of (cfg, seed).

    The expression kind, relation, color, and shape cycle with the seed so
    consecutive seed blocks are class-balanced. Scene layouts retry until
    the internal resolver confirms the expression picks exactly one
    object; exhausted retries reseed the layout stream (count logged).
    """
    use_relation = seed % 2 == 1
    relation = RELATION_NAMES[(seed // 2) % len(RELATION_NAMES)] if use_relation else None
    color = cfg.colors[(seed // 12) % len(cfg.colors)]
    shape = cfg.shapes[(seed // 72) % len(cfg.shapes)]

    reseeds = 0
    for round_idx in range(_RESEED_ROUNDS):
        rng = np.random.default_rng(stable_seed("scene", seed, round_idx))
        for _ in range(_SCENE_ATTEMPTS):
            composed = _compose_objects(cfg, rng, color, shape, relation)
            if composed is None:
                continue
            objects, target_idx = composed
            if resolve_expression(objects, color, shape, relation) != target_idx:
                continue
            image = _render(cfg, rng, objects)
            if reseeds:
                logger.info("seed %d needed %d reseed round(s)", seed, reseeds)
            return SampleRecord(
                image=image,
                token_ids=encode_expression(color, shape, relation, cfg.text_len),
                mask=objects[target_idx].mask,
                seed=seed,
                color=color,
                shape=shape,
                relation=relation,
                objects=objects,
                target_index=target_idx,
            )
        reseeds += 1
    raise DataError(f"could not build an unambiguous scene for seed {seed}")


# --------------------------------------------------------------------------
# manifests and datasets

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ManifestRecord:
    seed: int
    color: str
    shape: str
    relation: str | None
    token_ids: tuple[int, ...]
    target_area: int


@dataclass
class Manifest:
    canvas: int
    text_len: int
    records: list[ManifestRecord]

    def save(self, path: str | Path) -> None:
        lines = [
            f"# riskseg-synth v{MANIFEST_VERSION} canvas={self.canvas} text_len={self.text_len}",
            "# fields: seed color shape relation tokens target_area",
        ]
        for r in self.records:
            rel = r.relation if r.relation else "-"
            tokens = ",".join(str(t) for t in r.token_ids)
            lines.append(f"{r.seed} {r.color} {r.shape} {rel} {tokens} {r.target_area}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(f"# riskseg-synth v{MANIFEST_VERSION} "):
            raise DataError(f"unsupported manifest header in {path}")
        header = dict(kv.split("=") for kv in lines[0].split()[3:])
        records = []
        for line in lines[1:]:
            if not line.strip() or line.startswith("#"):
                continue
            seed, color, shape, rel, tokens, area = line.split()
            records.append(
                ManifestRecord(
                    seed=int(seed),
                    color=color,
                    shape=shape,
                    relation=None if rel == "-" else rel,
                    token_ids=tuple(int(t) for t in tokens.split(",")),
                    target_area=int(area),
                )
            )
        return cls(canvas=int(header["canvas"]), text_len=int(header["text_len"]), records=records)


def make_split(n: int, cfg: SceneConfig, base_seed: int) -> Manifest:
    """Manifest of ``n`` consecutive-seed samples starting at ``base_seed``."""
    if n < 1:
        raise ValueError("need n >= 1")
    records = []
    for i in range(n):
        rec = generate_scene(cfg, base_seed + i)
        records.append(
            ManifestRecord(
                seed=rec.seed,
                color=rec.color,
                shape=rec.shape,
                relation=rec.relation,
                token_ids=tuple(int(t) for t in rec.token_ids),
                target_area=int(rec.mask.sum()),
            )
        )
    return Manifest(canvas=cfg.canvas, text_len=cfg.text_len, records=records)


def make_splits(
    cfg: SceneConfig, counts: dict[str, int], base_seed: int
) -> dict[str, Manifest]:
    """Disjoint train/val/test manifests via fixed seed offsets."""
    out: dict[str, Manifest] = {}
    for split, n in counts.items():
        if split not in _SPLIT_OFFSETS:
            raise ValueError(f"unknown split {split!r}")
        if n >= 10_000_000:
            raise ValueError("split too large for the seed offset scheme")
        out[split] = make_split(n, cfg, base_seed + _SPLIT_OFFSETS[split])
    return out


@dataclass
class SynthDataset:
    """A split materialized as tensors, plus its records for auditing."""

    images: torch.Tensor  # (N, 3, H, W) float32
    token_ids: torch.Tensor  # (N, L) int64
    masks: torch.Tensor  # (N, 1, H, W) float32 in {0, 1}
    records: list[ManifestRecord]

    def __len__(self) -> int:
        return self.images.shape[0]


def build_dataset(manifest: Manifest, cfg: SceneConfig) -> SynthDataset:
    """Regenerate a manifest's samples and cross-check the stored metadata."""
    if manifest.canvas != cfg.canvas or manifest.text_len != cfg.text_len:
        raise DataError("manifest geometry does not match the scene config")
    images, ids, masks = [], [], []
    for r in manifest.records:
        rec = generate_scene(cfg, r.seed)
        if tuple(int(t) for t in rec.token_ids) != r.token_ids:
            raise DataError(f"manifest drift at seed {r.seed}: expression changed")
        images.append(torch.from_numpy(rec.image))
        ids.append(torch.from_numpy(rec.token_ids))
        masks.append(torch.from_numpy(rec.mask.astype(np.float32))[None])
    return SynthDataset(
        images=torch.stack(images),
        token_ids=torch.stack(ids),
        masks=torch.stack(masks),
        records=list(manifest.records),
    )
