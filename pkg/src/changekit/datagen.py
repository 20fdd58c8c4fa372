"""Synthetic paired scenes with exact change masks, plus dataset plumbing.

A pair is two renderings of the same scene: T1's object list differs from
T0's by a few semantic operations (insert, delete, move), and each image then
receives independent photometric nuisances (brightness/contrast shift,
additive noise, blur). The ground-truth mask marks exactly the pixels where
the two object sets differ, including both footprints of a moved object;
nuisances never touch the mask.

Footprint membership is defined per shape on pixel centers (col + 0.5,
row + 0.5) with integer shape coordinates, so the comparisons are exact in
floating point and a brute-force per-pixel rasterizer reproduces every mask
bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .rand import stream, subseed
from .tensor import bilinear_matrix

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


class GenerationError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


# -- shapes ------------------------------------------------------------------


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    w: int
    h: int

    def contains(self, px: float, py: float) -> bool:
        return self.x0 <= px < self.x0 + self.w and self.y0 <= py < self.y0 + self.h

    def footprint(self, h: int, w: int) -> np.ndarray:
        px, py = _pixel_centers(h, w)
        return (
            (px >= self.x0) & (px < self.x0 + self.w)
            & (py >= self.y0) & (py < self.y0 + self.h)
        )

    def moved(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x0 + dx, self.y0 + dy, self.w, self.h)

    def bounds(self):
        return self.x0, self.y0, self.x0 + self.w, self.y0 + self.h


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: int
    ry: int

    def contains(self, px: float, py: float) -> bool:
        u = (px - self.cx) / self.rx
        v = (py - self.cy) / self.ry
        return u * u + v * v <= 1.0

    def footprint(self, h: int, w: int) -> np.ndarray:
        px, py = _pixel_centers(h, w)
        u = (px - self.cx) / self.rx
        v = (py - self.cy) / self.ry
        return u * u + v * v <= 1.0

    def moved(self, dx: int, dy: int) -> "Ellipse":
        return Ellipse(self.cx + dx, self.cy + dy, self.rx, self.ry)

    def bounds(self):
        return self.cx - self.rx, self.cy - self.ry, self.cx + self.rx, self.cy + self.ry


@dataclass(frozen=True)
class Triangle:
    verts: tuple  # three (x, y) integer pairs, counter-clockwise

    def _edges(self):
        v = self.verts
        return ((v[0], v[1]), (v[1], v[2]), (v[2], v[0]))

    def contains(self, px: float, py: float) -> bool:
        for (x1, y1), (x2, y2) in self._edges():
            if (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) < 0.0:
                return False
        return True

    def footprint(self, h: int, w: int) -> np.ndarray:
        px, py = _pixel_centers(h, w)
        inside = np.ones((h, w), dtype=bool)
        for (x1, y1), (x2, y2) in self._edges():
            inside &= (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1) >= 0.0
        return inside

    def moved(self, dx: int, dy: int) -> "Triangle":
        return Triangle(tuple((x + dx, y + dy) for x, y in self.verts))

    def bounds(self):
        xs = [x for x, _ in self.verts]
        ys = [y for _, y in self.verts]
        return min(xs), min(ys), max(xs), max(ys)


def _pixel_centers(h: int, w: int):
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    return px + 0.5, py + 0.5


@dataclass(frozen=True)
class SceneObject:
    ident: int
    shape: object  # Rect | Ellipse | Triangle
    color: tuple   # rgb floats


@dataclass
class SceneSpec:
    height: int
    width: int
    background: np.ndarray  # (3,h,w) float32
    objects: list


@dataclass
class GeneratorConfig:
    canvas: int = 32
    object_count: tuple = (1, 3)
    change_count: tuple = (0, 2)
    object_frac: tuple = (0.22, 0.45)   # object extent as a fraction of canvas
    background_cells: int = 4
    background_amp: float = 0.12
    color_contrast: float = 0.25
    brightness_delta: float = 0.15
    contrast_range: tuple = (0.8, 1.25)
    noise_sigma: float = 0.03
    blur_sigma: float = 0.8
    translate_max: int = 0  # shared geometric jitter applied to both images and the mask


@dataclass
class LabeledPair:
    t0: np.ndarray          # (3,h,w) float32 in [0,1]
    t1: np.ndarray
    mask: np.ndarray        # (1,h,w) uint8 in {0,1}
    meta: dict = field(default_factory=dict)


# -- scene sampling ----------------------------------------------------------


def _sample_color(rng: np.random.Generator, background_gray: float, contrast: float) -> tuple:
    for _ in range(100):
        c = rng.uniform(0.0, 1.0, size=3)
        if np.max(np.abs(c - background_gray)) >= contrast:
            return tuple(float(v) for v in c)
    raise GenerationError("could not sample a contrasting object color")


def _sample_shape(rng: np.random.Generator, cfg: GeneratorConfig):
    size = cfg.canvas
    lo = max(3, int(round(cfg.object_frac[0] * size)))
    hi = max(lo + 1, int(round(cfg.object_frac[1] * size)))
    kind = ["rect", "ellipse", "triangle"][int(rng.integers(0, 3))]
    for _ in range(100):
        if kind == "rect":
            w = int(rng.integers(lo, hi + 1))
            h = int(rng.integers(lo, hi + 1))
            if w >= size or h >= size:
                continue
            x0 = int(rng.integers(0, size - w + 1))
            y0 = int(rng.integers(0, size - h + 1))
            return Rect(x0, y0, w, h)
        if kind == "ellipse":
            rx = int(rng.integers(max(2, lo // 2), max(3, hi // 2) + 1))
            ry = int(rng.integers(max(2, lo // 2), max(3, hi // 2) + 1))
            if 2 * rx >= size or 2 * ry >= size:
                continue
            cx = int(rng.integers(rx, size - rx + 1))
            cy = int(rng.integers(ry, size - ry + 1))
            return Ellipse(float(cx), float(cy), rx, ry)
        ext = int(rng.integers(lo, hi + 1))
        if ext >= size:
            continue
        x0 = int(rng.integers(0, size - ext + 1))
        y0 = int(rng.integers(0, size - ext + 1))
        pts = []
        for _ in range(3):
            pts.append((int(rng.integers(x0, x0 + ext + 1)), int(rng.integers(y0, y0 + ext + 1))))
        tri = Triangle(tuple(pts))
        area2 = _signed_area2(tri.verts)
        if abs(area2) < max(4, ext):  # reject degenerate slivers
            continue
        if area2 < 0:
            tri = Triangle((tri.verts[0], tri.verts[2], tri.verts[1]))
        return tri
    raise GenerationError(f"could not place a {kind} inside the canvas")


def _signed_area2(verts) -> float:
    (x1, y1), (x2, y2), (x3, y3) = verts
    return (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)


def _inside_canvas(shape, size: int) -> bool:
    x0, y0, x1, y1 = shape.bounds()
    return x0 >= 0 and y0 >= 0 and x1 <= size and y1 <= size


def _sample_background(rng: np.random.Generator, cfg: GeneratorConfig) -> tuple[np.ndarray, float]:
    base = float(rng.uniform(0.35, 0.65))
    cells = rng.uniform(
        base - cfg.background_amp, base + cfg.background_amp,
        size=(3, cfg.background_cells, cfg.background_cells),
    )
    rows = bilinear_matrix(cfg.canvas, cfg.background_cells)
    cols = bilinear_matrix(cfg.canvas, cfg.background_cells)
    bg = np.einsum("oh,chw,pw->cop", rows, cells, cols)
    return np.clip(bg, 0.0, 1.0).astype(np.float32), base


def _sample_scene(rng: np.random.Generator, cfg: GeneratorConfig) -> SceneSpec:
    background, base_gray = _sample_background(rng, cfg)
    n = int(rng.integers(cfg.object_count[0], cfg.object_count[1] + 1))
    objects = []
    for ident in range(n):
        shape = _sample_shape(rng, cfg)
        color = _sample_color(rng, base_gray, cfg.color_contrast)
        objects.append(SceneObject(ident, shape, color))
    return SceneSpec(cfg.canvas, cfg.canvas, background, objects)


def _apply_changes(scene: SceneSpec, rng: np.random.Generator, cfg: GeneratorConfig):
    """Return (objects for T1, changed-object footprint list, op names)."""
    objects = list(scene.objects)
    next_id = max((o.ident for o in objects), default=-1) + 1
    changed_shapes = []
    ops = []
    k = int(rng.integers(cfg.change_count[0], cfg.change_count[1] + 1))
    base_gray = float(np.mean(scene.background))
    for _ in range(k):
        choices = ["insert"] if not objects else ["insert", "delete", "move"]
        op = choices[int(rng.integers(0, len(choices)))]
        if op == "insert":
            shape = _sample_shape(rng, cfg)
            color = _sample_color(rng, base_gray, cfg.color_contrast)
            objects.append(SceneObject(next_id, shape, color))
            next_id += 1
            changed_shapes.append(shape)
        elif op == "delete":
            idx = int(rng.integers(0, len(objects)))
            removed = objects.pop(idx)
            changed_shapes.append(removed.shape)
        else:
            idx = int(rng.integers(0, len(objects)))
            obj = objects[idx]
            moved = None
            for _ in range(100):
                dx = int(rng.integers(-cfg.canvas // 2, cfg.canvas // 2 + 1))
                dy = int(rng.integers(-cfg.canvas // 2, cfg.canvas // 2 + 1))
                if dx == 0 and dy == 0:
                    continue
                candidate = obj.shape.moved(dx, dy)
                if _inside_canvas(candidate, cfg.canvas):
                    moved = candidate
                    break
            if moved is None:
                raise GenerationError("no feasible move found")
            objects[idx] = SceneObject(obj.ident, moved, obj.color)
            changed_shapes.append(obj.shape)
            changed_shapes.append(moved)
        ops.append(op)
    return objects, changed_shapes, ops


def render(scene_bg: np.ndarray, objects, h: int, w: int) -> np.ndarray:
    """Painter's-order rendering: later objects draw over earlier ones."""
    img = scene_bg.copy()
    for obj in objects:
        fp = obj.shape.footprint(h, w)
        for c in range(3):
            img[c][fp] = obj.color[c]
    return img


def change_mask(changed_shapes, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for shape in changed_shapes:
        mask |= shape.footprint(h, w)
    return mask[None].astype(np.uint8)


def _apply_nuisance(img: np.ndarray, rng: np.random.Generator, cfg: GeneratorConfig):
    delta = float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
    factor = float(rng.uniform(*cfg.contrast_range))
    sigma_n = float(rng.uniform(0.0, cfg.noise_sigma))
    sigma_b = float(rng.uniform(0.0, cfg.blur_sigma))
    out = img + delta
    mean = out.mean()
    out = mean + (out - mean) * factor
    if sigma_b > 1e-3:
        out = np.stack([ndimage.gaussian_filter(ch, sigma=sigma_b, mode="nearest") for ch in out])
    if sigma_n > 0:
        out = out + rng.normal(0.0, sigma_n, size=out.shape)
    params = {"brightness": delta, "contrast": factor, "noise": sigma_n, "blur": sigma_b}
    return np.clip(out, 0.0, 1.0).astype(np.float32), params


def generate_pair(seed: int, cfg: GeneratorConfig, nuisance_seed: int | None = None) -> LabeledPair:
    """Fully seed-determined labeled pair.

    The seed splits into scene, change, and per-image nuisance sub-streams;
    overriding ``nuisance_seed`` changes only the photometric nuisances, never
    the mask.
    """
    nseed = seed if nuisance_seed is None else nuisance_seed
    last_err = None
    for attempt in range(100):
        try:
            scene = _sample_scene(stream(seed, "scene", attempt), cfg)
            objects1, changed, ops = _apply_changes(scene, stream(seed, "change", attempt), cfg)
        except GenerationError as err:
            last_err = err
            continue
        t0 = render(scene.background, scene.objects, cfg.canvas, cfg.canvas)
        t1 = render(scene.background, objects1, cfg.canvas, cfg.canvas)
        mask = change_mask(changed, cfg.canvas, cfg.canvas)
        t0, nui0 = _apply_nuisance(t0, stream(nseed, "nuisance", 0), cfg)
        t1, nui1 = _apply_nuisance(t1, stream(nseed, "nuisance", 1), cfg)
        if cfg.translate_max > 0:
            shift_rng = stream(seed, "translate", attempt)
            dx = int(shift_rng.integers(-cfg.translate_max, cfg.translate_max + 1))
            dy = int(shift_rng.integers(-cfg.translate_max, cfg.translate_max + 1))
            t0, t1 = _shift(t0, dx, dy), _shift(t1, dx, dy)
            mask = _shift(mask, dx, dy)
        meta = {
            "seed": seed,
            "attempt": attempt,
            "ops": ops,
            "nuisance_t0": nui0,
            "nuisance_t1": nui1,
        }
        return LabeledPair(t0=t0, t1=t1, mask=mask, meta=meta)
    raise GenerationError(f"generation failed after 100 attempts for seed {seed}: {last_err}")


def _shift(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate with edge replication, same transform for images and mask."""
    pad_y = (max(dy, 0), max(-dy, 0))
    pad_x = (max(dx, 0), max(-dx, 0))
    padded = np.pad(arr, ((0, 0), pad_y, pad_x), mode="edge")
    h, w = arr.shape[1:]
    return padded[:, pad_y[1] : pad_y[1] + h, pad_x[1] : pad_x[1] + w]


# -- image files and manifests -------------------------------------------------


def save_image(path: Path, img: np.ndarray) -> None:
    """8-bit PNG from a (3,h,w) float image in [0,1]."""
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path, format="PNG")


def save_mask(path: Path, mask: np.ndarray) -> None:
    arr = (mask[0] > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)[None]


@dataclass
class ManifestEntry:
    name: str
    t0: str
    t1: str
    mask: str | None = None
    split: str | None = None
    stratum: int | None = None
    change_area: int | None = None


@dataclass
class DatasetManifest:
    root: str
    entries: list
    unmatched: list = field(default_factory=list)

    def with_split(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def labeled(self) -> bool:
        return all(e.mask is not None for e in self.entries)

    def entry_paths(self, entry: ManifestEntry):
        root = Path(self.root)
        mask = root / entry.mask if entry.mask else None
        return root / entry.t0, root / entry.t1, mask


def assign_strata(manifest: DatasetManifest) -> None:
    """Stratum 0 holds zero-change entries; 1..4 are rank quartiles of the rest."""
    labeled = [e for e in manifest.entries if e.change_area is not None]
    nonzero = sorted(
        (e for e in labeled if e.change_area > 0), key=lambda e: (e.change_area, e.name)
    )
    for e in labeled:
        if e.change_area == 0:
            e.stratum = 0
    n = len(nonzero)
    for rank, e in enumerate(nonzero):
        e.stratum = 1 + min(3, rank * 4 // max(n, 1))


def save_manifest(manifest: DatasetManifest, path: Path | None = None) -> Path:
    path = path or Path(manifest.root) / MANIFEST_NAME
    doc = {
        "version": MANIFEST_VERSION,
        "entries": [dataclasses.asdict(e) for e in manifest.entries],
        "unmatched": sorted(manifest.unmatched),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def load_manifest(root: Path) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    doc = json.loads(path.read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {doc.get('version')}")
    entries = [ManifestEntry(**e) for e in doc["entries"]]
    return DatasetManifest(root=str(root), entries=entries, unmatched=doc.get("unmatched", []))


def load_paired_dataset(root: Path) -> DatasetManifest:
    """Build a manifest from a root with t0/, t1/ and optional mask/ directories.

    Images pair up by file name. Entries whose images disagree in size are
    rejected; files without a counterpart land in the unmatched report.
    """
    root = Path(root)
    t0_dir, t1_dir, mask_dir = root / "t0", root / "t1", root / "mask"
    if not t0_dir.is_dir() or not t1_dir.is_dir():
        raise DatasetError(f"{root}: expected t0/ and t1/ directories")
    t0_names = {p.name for p in t0_dir.iterdir() if p.is_file()}
    t1_names = {p.name for p in t1_dir.iterdir() if p.is_file()}
    mask_names = (
        {p.name for p in mask_dir.iterdir() if p.is_file()} if mask_dir.is_dir() else set()
    )

    unmatched = [f"t0/{n} has no t1 counterpart" for n in sorted(t0_names - t1_names)]
    unmatched += [f"t1/{n} has no t0 counterpart" for n in sorted(t1_names - t0_names)]
    common = sorted(t0_names & t1_names)
    if mask_names:
        unmatched += [f"mask/{n} has no image pair" for n in sorted(mask_names - set(common))]

    entries = []
    for name in common:
        with Image.open(t0_dir / name) as im0, Image.open(t1_dir / name) as im1:
            if im0.size != im1.size:
                raise DatasetError(
                    f"entry {name!r}: t0 is {im0.size}, t1 is {im1.size}"
                )
            size = im0.size
        mask_rel = None
        area = None
        if name in mask_names:
            with Image.open(mask_dir / name) as imm:
                if imm.size != size:
                    raise DatasetError(f"entry {name!r}: mask size {imm.size} != image {size}")
            mask_rel = f"mask/{name}"
            area = int((load_mask(mask_dir / name) > 0).sum())
        entries.append(
            ManifestEntry(
                name=name, t0=f"t0/{name}", t1=f"t1/{name}",
                mask=mask_rel, change_area=area,
            )
        )
    if not entries:
        raise DatasetError(f"{root}: no matched image pairs found")
    manifest = DatasetManifest(root=str(root), entries=entries, unmatched=unmatched)
    assign_strata(manifest)
    return manifest


def generate_dataset(
    out_dir: Path,
    count: int,
    seed: int,
    cfg: GeneratorConfig,
    fractions: tuple = (0.7, 0.1, 0.2),
) -> DatasetManifest:
    """Render ``count`` pairs to PNG files and write a split, stratified manifest."""
    out_dir = Path(out_dir)
    for sub in ("t0", "t1", "mask"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        pair = generate_pair(subseed(seed, "pair", i), cfg)
        name = f"{i:05d}.png"
        save_image(out_dir / "t0" / name, pair.t0)
        save_image(out_dir / "t1" / name, pair.t1)
        save_mask(out_dir / "mask" / name, pair.mask)
        entries.append(
            ManifestEntry(
                name=name, t0=f"t0/{name}", t1=f"t1/{name}", mask=f"mask/{name}",
                change_area=int(pair.mask.sum()),
            )
        )
    manifest = DatasetManifest(root=str(out_dir), entries=entries)
    assign_strata(manifest)
    manifest = split(manifest, fractions, seed)
    save_manifest(manifest)
    return manifest


# -- tiling, splits, label budgets ---------------------------------------------


def tile_panorama(pair: LabeledPair, tile: int = 224, stride: int = 56, rotations: int = 1):
    """Slide a tile x tile window across the width, optionally adding 90-degree
    rotations; masks are cropped and rotated identically to the images."""
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    _, h, w = pair.t0.shape
    if tile > h or tile > w:
        raise ValueError(f"tile {tile} exceeds image size {h}x{w}")
    if rotations < 1:
        raise ValueError(f"rotations must be >= 1, got {rotations}")
    positions = (w - tile) // stride + 1
    out = []
    for p in range(positions):
        x = p * stride
        crops = (
            pair.t0[:, :tile, x : x + tile],
            pair.t1[:, :tile, x : x + tile],
            pair.mask[:, :tile, x : x + tile],
        )
        for r in range(rotations):
            t0 = np.rot90(crops[0], k=r, axes=(1, 2)).copy()
            t1 = np.rot90(crops[1], k=r, axes=(1, 2)).copy()
            m = np.rot90(crops[2], k=r, axes=(1, 2)).copy()
            meta = dict(pair.meta, tile_x=x, rotation=r * 90)
            out.append(LabeledPair(t0=t0, t1=t1, mask=m, meta=meta))
    return out


def split(manifest: DatasetManifest, fractions: tuple, seed: int) -> DatasetManifest:
    """Deterministic shuffled train/val/test assignment.

    Counts are floor(fraction * n) with the remainder going to the largest
    fractional parts (ties resolved in train, val, test order).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = len(manifest.entries)
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[order[i % 3]] += 1
    names = ("train", "val", "test")
    for frac, cnt, name in zip(fractions, counts, names):
        if frac > 0 and cnt == 0:
            raise ValueError(f"{name} split would be empty at fraction {frac} with {n} entries")
    perm = stream(seed, "split").permutation(n)
    entries = [dataclasses.replace(e) for e in manifest.entries]
    cursor = 0
    for cnt, name in zip(counts, names):
        for idx in perm[cursor : cursor + cnt]:
            entries[idx].split = name
        cursor += cnt
    return DatasetManifest(root=manifest.root, entries=entries, unmatched=list(manifest.unmatched))


def limited_label_sample(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    """Keep a change-area-stratified fraction of the train entries.

    Every stratum contributes ceil(fraction * stratum size) entries, so each
    nonempty stratum keeps at least one. Validation and test entries pass
    through untouched.
    """
    if fraction <= 0:
        raise ValueError(f"label fraction must be positive, got {fraction}")
    if fraction > 1:
        raise ValueError(f"label fraction must be <= 1, got {fraction}")
    if not manifest.labeled():
        raise DatasetError("limited-label sampling needs masks on every entry")
    train = manifest.with_split("train")
    if fraction == 1.0:
        return manifest
    by_stratum: dict[int, list] = {}
    for e in train:
        if e.stratum is None:
            raise DatasetError(f"entry {e.name!r} has no stratum; rebuild the manifest")
        by_stratum.setdefault(e.stratum, []).append(e)
    keep = set()
    for stratum in sorted(by_stratum):
        group = sorted(by_stratum[stratum], key=lambda e: e.name)
        want = int(np.ceil(fraction * len(group)))
        picks = stream(seed, "labels", stratum).choice(len(group), size=want, replace=False)
        keep.update(group[i].name for i in picks)
    entries = [
        dataclasses.replace(e)
        for e in manifest.entries
        if e.split != "train" or e.name in keep
    ]
    return DatasetManifest(root=manifest.root, entries=entries, unmatched=list(manifest.unmatched))
