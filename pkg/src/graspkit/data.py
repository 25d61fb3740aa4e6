"""Scenes, label formats, synthetic data, augmentation and dense targets."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .geom import GraspRect, normalize_angle, quad_to_rect, rect_to_quad

SHAPES = ("bar", "ellipse", "diamond")
K_ANGLE = 18
ROTATION_STEP = 20.0
NUM_ROTATIONS = 18


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class LabeledScene:
    """An image ``[3, H, W]`` in [0, 1] with its ground-truth grasps.

    ``image`` may be ``None`` for a header parsed from a scene file; call
    :func:`load_scene_image` to fill it.
    """

    image: np.ndarray | None
    grasps: list
    source_id: str
    image_path: str | None = None
    objects: list = field(default_factory=list)

    @property
    def size(self):
        """(H, W) of the image."""
        return self.image.shape[1], self.image.shape[2]

    def with_(self, **changes) -> "LabeledScene":
        return replace(self, **changes)


@dataclass
class TargetMaps:
    """Dense supervision for one scene at a given stride.

    ``offsets`` rows hold the head's pre-activation targets:
    (atanh of the in-cell center offset x, same for y, log w/stride, log h/stride).
    """

    positive: np.ndarray
    cells: np.ndarray
    offsets: np.ndarray
    angle_bins: np.ndarray
    categories: np.ndarray
    rects: list
    stride: int
    collisions: int = 0


# image I/O

def read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """``[3, H, W]`` floats in [0, 1] -> ``[H, W, 3]`` bytes."""
    return np.clip(np.rint(image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    from PIL import Image

    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"unsupported image format {path.suffix!r}; use .png or .ppm")
    Image.fromarray(to_uint8(image)).save(path, format=fmt)


# Cornell rectangle files

def parse_cornell_rect_file(text: str) -> list:
    """Parse 4-vertex-per-grasp "x y" lines into GraspRects.

    Quadruples with NaN or malformed coordinates are skipped and reported
    through a single ``UserWarning`` carrying the skip count.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) % 4:
        raise DataError(f"Cornell file has {len(lines)} vertex lines, not a multiple of 4")
    rects = []
    skipped = 0
    for k in range(0, len(lines), 4):
        try:
            pts = []
            for ln in lines[k:k + 4]:
                parts = ln.split()
                if len(parts) != 2:
                    raise ValueError(ln)
                pts.append((float(parts[0]), float(parts[1])))
            rects.append(quad_to_rect(np.array(pts)))
        except ValueError:
            skipped += 1
    if skipped:
        warnings.warn(f"skipped {skipped} malformed or NaN grasp rectangle(s)", UserWarning, stacklevel=2)
    return rects


def format_cornell_rects(rects) -> str:
    out = []
    for r in rects:
        for x, y in rect_to_quad(r):
            out.append(f"{x:.3f} {y:.3f}")
    return "\n".join(out) + ("\n" if out else "")


# scene files (JSON lines)

_GRASP_FIELDS = ("x", "y", "w", "h", "theta", "category")


def grasp_from_dict(d: dict, k_obj: int | None = None, where: str = "") -> GraspRect:
    missing = [f for f in _GRASP_FIELDS if f not in d]
    if missing:
        raise DataError(f"{where}grasp is missing field(s) {', '.join(missing)}")
    for f in ("w", "h"):
        if not float(d[f]) > 0:
            raise DataError(f"{where}grasp field {f} must be > 0, got {d[f]}")
    cat = int(d["category"])
    if cat < 0 or (k_obj is not None and cat >= k_obj):
        raise DataError(f"{where}grasp field category {cat} out of range for {k_obj} classes")
    try:
        return GraspRect(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]),
                         float(d["theta"]), cat, float(d.get("score", 1.0)))
    except ValueError as e:
        raise DataError(f"{where}{e}") from None


def parse_scene_jsonl(line: str, base_dir=None, k_obj: int | None = None) -> LabeledScene:
    """Validate one scene record; the image is not loaded."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON: {e}") from None
    if not isinstance(rec, dict):
        raise DataError("scene record must be a JSON object")
    for f in ("image_path", "grasps"):
        if f not in rec:
            raise DataError(f"scene record is missing field {f}")
    path = str(rec["image_path"])
    if base_dir is not None and not Path(path).is_absolute():
        path = str(Path(base_dir) / path)
    sid = str(rec.get("source_id") or Path(rec["image_path"]).stem)
    grasps = [grasp_from_dict(g, k_obj, f"{sid}: ") for g in rec["grasps"]]
    return LabeledScene(None, grasps, sid, path)


def scene_to_record(scene: LabeledScene, image_path: str | None = None) -> dict:
    return {
        "source_id": scene.source_id,
        "image_path": image_path if image_path is not None else scene.image_path,
        "grasps": [g.as_dict() for g in scene.grasps],
    }


def read_scenes(path, k_obj: int | None = None, load_images: bool = True) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"scene file not found: {path}")
    scenes = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            sc = parse_scene_jsonl(line, base_dir=path.parent, k_obj=k_obj)
        except DataError as e:
            raise DataError(f"{path}:{n}: {e}") from None
        if load_images:
            sc = load_scene_image(sc)
        scenes.append(sc)
    return scenes


def load_scene_image(scene: LabeledScene) -> LabeledScene:
    if scene.image is not None:
        return scene
    if not scene.image_path or not Path(scene.image_path).exists():
        raise DataError(f"image not found for scene {scene.source_id}: {scene.image_path}")
    return scene.with_(image=read_image(scene.image_path))


def write_scenes(path, scenes, image_dir=None) -> None:
    """Write scenes as JSON lines, saving images as PNG next to the file when needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for sc in scenes:
        rel = sc.image_path
        if sc.image is not None and image_dir is not None:
            img_dir = Path(image_dir)
            img_dir.mkdir(parents=True, exist_ok=True)
            target = img_dir / f"{sc.source_id}.png"
            write_image(target, sc.image)
            try:
                rel = str(target.relative_to(path.parent))
            except ValueError:
                rel = str(target)
        lines.append(json.dumps(scene_to_record(sc, rel)))
    path.write_text("".join(ln + "\n" for ln in lines))


# synthetic scenes

_BASE_COLORS = np.array([
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.35, 0.90],
])


def _object_mask(shape, xs, ys, cx, cy, length, thickness, angle_deg):
    t = math.radians(angle_deg)
    dx, dy = xs - cx, ys - cy
    u = (dx * math.cos(t) + dy * math.sin(t)) / (0.5 * length)
    v = (-dx * math.sin(t) + dy * math.cos(t)) / (0.5 * thickness)
    if shape == "bar":
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    if shape == "ellipse":
        return u * u + v * v <= 1.0
    return np.abs(u) + np.abs(v) <= 1.0


def object_grasp(obj: dict) -> GraspRect:
    """The ground-truth grasp for a synthetic object: closing across its minor axis."""
    t = obj["thickness"]
    return GraspRect(obj["cx"], obj["cy"], 1.6 * t, 0.8 * t, obj["angle"] + 90.0, obj["category"])


def synth_scene(rng_seed: int, n_objects: int = 1, canvas: int = 224, min_separation: float | None = None,
                cell: int = 8) -> LabeledScene:
    """Render ``n_objects`` coloured bars/ellipses/diamonds on a textured background.

    Category is the shape type. Centers land in distinct ``cell``-pixel grid
    cells and at least ``min_separation`` apart (default 15% of the canvas).
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    rng = np.random.default_rng(rng_seed)
    S = int(canvas)
    ys, xs = np.mgrid[0:S, 0:S] + 0.5
    freq = rng.uniform(2.0, 6.0, size=2) * 2 * math.pi / S
    phase = rng.uniform(0, 2 * math.pi, size=2)
    tex = 0.5 + 0.05 * np.sin(xs * freq[0] + phase[0]) * np.cos(ys * freq[1] + phase[1])
    img = np.repeat(tex[None], 3, axis=0) + rng.normal(0.0, 0.02, size=(3, S, S))
    img *= rng.uniform(0.8, 1.0, size=(3, 1, 1))
    sep = 0.15 * S if min_separation is None else float(min_separation)
    margin = 0.2 * S
    objects = []
    used_cells = set()
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > 10000:
            raise RuntimeError(f"could not place {n_objects} objects on a {S}px canvas")
        cx, cy = rng.uniform(margin, S - margin, size=2)
        cell_id = (int(cy // cell), int(cx // cell))
        if cell_id in used_cells or any(math.hypot(cx - o["cx"], cy - o["cy"]) < sep for o in objects):
            continue
        cat = int(rng.integers(len(SHAPES)))
        obj = {
            "shape": SHAPES[cat],
            "category": cat,
            "cx": float(cx),
            "cy": float(cy),
            "length": float(rng.uniform(0.25, 0.45) * S),
            "thickness": float(rng.uniform(0.10, 0.16) * S),
            "angle": float(rng.uniform(0.0, 180.0)),
            "color": np.clip(_BASE_COLORS[cat] + rng.uniform(-0.1, 0.1, size=3), 0, 1).tolist(),
        }
        used_cells.add(cell_id)
        objects.append(obj)
    for obj in objects:
        m = _object_mask(obj["shape"], xs, ys, obj["cx"], obj["cy"], obj["length"], obj["thickness"], obj["angle"])
        img[:, m] = np.array(obj["color"])[:, None]
    img = np.clip(img, 0.0, 1.0)
    grasps = [object_grasp(o) for o in objects]
    return LabeledScene(img, grasps, f"synth-{rng_seed:06d}", None, objects)


# geometric augmentation

def _resample(image, src_x, src_y):
    # pixel centers sit at integer + 0.5; edge pixels extend outward
    coords = np.stack([src_y - 0.5, src_x - 0.5])
    return np.stack([map_coordinates(ch, coords, order=1, mode="nearest") for ch in image])


def resize_to_input(scene: LabeledScene, size: int = 224) -> LabeledScene:
    """Bilinear resize to ``size x size``; labels follow through the per-axis scaling."""
    H, W = scene.size
    if (H, W) == (size, size):
        return scene
    sx, sy = size / W, size / H
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    img = _resample(scene.image, xs / sx, ys / sy)
    return scene.with_(image=img, grasps=[scale_rect(g, sx, sy) for g in scene.grasps])


def scale_rect(g: GraspRect, sx: float, sy: float) -> GraspRect:
    """Map a grasp through ``(x, y) -> (sx*x, sy*y)``; exact when ``sx == sy``."""
    if sx == sy:
        return g.moved(x=g.x * sx, y=g.y * sy, w=g.w * sx, h=g.h * sy)
    q = rect_to_quad(g) * np.array([sx, sy])
    return quad_to_rect(q, g.category, g.confidence)


def _rotate_point(x, y, cx, cy, deg):
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    dx, dy = x - cx, y - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def rotate_labels(grasps, k: int, width: float, height: float) -> list:
    """Rotate grasp labels by ``20k`` degrees about the image center; drop those leaving the frame."""
    deg = ROTATION_STEP * k
    cx, cy = 0.5 * width, 0.5 * height
    out = []
    for g in grasps:
        x, y = _rotate_point(g.x, g.y, cx, cy, deg)
        if 0.0 <= x < width and 0.0 <= y < height:
            out.append(g.moved(x=x, y=y, theta=g.theta + deg))
    return out


def rotate_augment(scene: LabeledScene, k: int) -> LabeledScene:
    """Rotate image and labels by ``20k`` degrees (k in 0..17) about the image center."""
    if not 0 <= k < NUM_ROTATIONS:
        raise ValueError(f"rotation index {k} outside 0..{NUM_ROTATIONS - 1}")
    H, W = scene.size
    if H != W:
        raise DataError(f"rotation augmentation needs a square image, got {H}x{W}")
    if k == 0:
        return scene
    deg = ROTATION_STEP * k
    cx, cy = 0.5 * W, 0.5 * H
    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    src_x, src_y = _rotate_point(xs, ys, cx, cy, -deg)
    img = _resample(scene.image, src_x, src_y)
    return scene.with_(image=img, grasps=rotate_labels(scene.grasps, k, W, H))


# angle bins and dense targets

def bin_angle(theta: float, k_angle: int = K_ANGLE) -> int:
    width = 180.0 / k_angle
    return min(int(normalize_angle(theta) // width), k_angle - 1)


def bin_center(index: int, k_angle: int = K_ANGLE) -> float:
    return (index + 0.5) * 180.0 / k_angle


def build_targets(scene: LabeledScene, stride: int = 8, k_angle: int = K_ANGLE, k_obj: int = 1) -> TargetMaps:
    """One positive cell per grasp: the cell holding its center.

    When two centers share a cell the larger-area grasp wins and the clash is
    counted in ``collisions``.
    """
    H, W = scene.size
    gh, gw = H // stride, W // stride
    owner = {}
    collisions = 0
    for g in scene.grasps:
        if g.category >= k_obj:
            raise DataError(f"{scene.source_id}: category {g.category} out of range for {k_obj} classes")
        i = min(max(int(math.floor(g.y / stride)), 0), gh - 1)
        j = min(max(int(math.floor(g.x / stride)), 0), gw - 1)
        if (i, j) in owner:
            collisions += 1
            if g.area <= owner[(i, j)].area:
                continue
        owner[(i, j)] = g
    positive = np.zeros((gh, gw), dtype=bool)
    cells = sorted(owner)
    offsets = np.zeros((len(cells), 4))
    bins = np.zeros(len(cells), dtype=np.int64)
    cats = np.zeros(len(cells), dtype=np.int64)
    rects = []
    for n, (i, j) in enumerate(cells):
        g = owner[(i, j)]
        positive[i, j] = True
        tx = g.x / stride - j - 0.5
        ty = g.y / stride - i - 0.5
        offsets[n] = (math.atanh(tx), math.atanh(ty), math.log(g.w / stride), math.log(g.h / stride))
        bins[n] = bin_angle(g.theta, k_angle)
        cats[n] = g.category
        rects.append(g)
    return TargetMaps(positive, np.array(cells, dtype=np.int64).reshape(-1, 2), offsets, bins, cats,
                      rects, stride, collisions)


def targets_to_map_array(targets: TargetMaps, k_angle: int = K_ANGLE, k_obj: int = 1,
                         logit: float = 12.0) -> np.ndarray:
    """Dense map ``[4 + k_angle + k_obj + 1, H', W']`` that decodes back to the targets."""
    gh, gw = targets.positive.shape
    out = np.zeros((4 + k_angle + k_obj + 1, gh, gw))
    out[-1] = -logit
    for n, (i, j) in enumerate(targets.cells):
        out[0:4, i, j] = targets.offsets[n]
        out[4 + targets.angle_bins[n], i, j] = logit
        out[4 + k_angle + targets.categories[n], i, j] = logit
        out[-1, i, j] = logit
    return out
