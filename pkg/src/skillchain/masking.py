"""Deployment masking, background-only random erasing and a top-down rasterizer.

Images are (H, W, 3) uint8 arrays; masks are (H, W) bool arrays with True
for foreground (gripper, reference object, grasped object). Pixel
rectangles are half-open ``(x0, y0, x1, y1)`` in column/row coordinates.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .geometry import Pose
from .world import WorldState

TABLE_COLOR = (200, 190, 170)
GRIPPER_COLOR = (50, 50, 55)
GRIPPER_RADIUS = 0.02
ASPECT_RANGE = (0.5, 2.0)


class DimensionMismatch(ValueError):
    pass


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, color=TABLE_COLOR) -> "Image":
        return cls(np.broadcast_to(np.asarray(color, np.uint8), (height, width, 3)).copy())


@dataclass(frozen=True)
class SegMask:
    foreground: np.ndarray

    def __post_init__(self):
        fg = np.asarray(self.foreground)
        if fg.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {fg.shape}")
        object.__setattr__(self, "foreground", fg.astype(bool, copy=False))

    @property
    def width(self) -> int:
        return self.foreground.shape[1]

    @property
    def height(self) -> int:
        return self.foreground.shape[0]

    @classmethod
    def empty(cls, width: int, height: int) -> "SegMask":
        return cls(np.zeros((height, width), bool))


@dataclass(frozen=True)
class EraseConfig:
    rect_count_range: tuple = (2, 5)
    area_ratio_range: tuple = (0.05, 0.25)

    def __post_init__(self):
        lo_n, hi_n = (int(v) for v in self.rect_count_range)
        lo, hi = (float(v) for v in self.area_ratio_range)
        if not 1 <= lo_n <= hi_n:
            raise ValueError(f"rect_count_range must satisfy 1 <= min <= max, got {self.rect_count_range}")
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"area_ratio_range must satisfy 0 <= lo <= hi <= 1, got {self.area_ratio_range}")
        object.__setattr__(self, "rect_count_range", (lo_n, hi_n))
        object.__setattr__(self, "area_ratio_range", (lo, hi))

    def to_dict(self) -> dict:
        return {"rect_count_range": list(self.rect_count_range), "area_ratio_range": list(self.area_ratio_range)}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EraseConfig":
        unknown = set(raw) - {"rect_count_range", "area_ratio_range"}
        if unknown:
            raise ValueError(f"unknown erase config fields {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in raw.items()})


@dataclass(frozen=True)
class EraseResult:
    image: Image
    rect_count: int
    target_ratio: float
    erased_pixels: int
    rects: tuple = field(default_factory=tuple)

    @property
    def achieved_ratio(self) -> float:
        return self.erased_pixels / (self.image.width * self.image.height)

    def to_dict(self) -> dict:
        return {
            "rect_count": self.rect_count,
            "target_ratio": round(self.target_ratio, 8),
            "achieved_ratio": round(self.achieved_ratio, 8),
            "erased_pixels": self.erased_pixels,
            "rects": [list(r) for r in self.rects],
        }


# ---------------------------------------------------------------------------
# Random erasing


def _check_dims(img: Image, mask: SegMask) -> None:
    if (img.width, img.height) != (mask.width, mask.height):
        raise DimensionMismatch(f"image {img.width}x{img.height} vs mask {mask.width}x{mask.height}")


class _Counter:
    """Counts still-erasable pixels in rectangles via a summed-area table."""

    def __init__(self, erasable: np.ndarray):
        self.update(erasable)

    def update(self, erasable: np.ndarray) -> None:
        s = np.zeros((erasable.shape[0] + 1, erasable.shape[1] + 1), np.int64)
        s[1:, 1:] = erasable.cumsum(0).cumsum(1)
        self.s = s

    def count(self, r) -> int:
        x0, y0, x1, y1 = r
        s = self.s
        return int(s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0])


def _centered(cx: int, cy: int, w: int, h: int, W: int, H: int) -> tuple:
    x0, y0 = cx - w // 2, cy - h // 2
    return (max(0, x0), max(0, y0), min(W, x0 + w), min(H, y0 + h))


def _fit_rect(counter: _Counter, cx: int, cy: int, aspect: float, want: int, W: int, H: int) -> tuple:
    """Rectangle centred near (cx, cy) whose erasable-pixel count is closest to ``want``."""
    def size_for(w):
        return w, max(1, min(2 * H, int(round(w / aspect))))

    # counts grow monotonically with w for nested centred rectangles
    lo, hi = 1, 2 * max(W, int(math.ceil(H * aspect)))
    while lo < hi:
        mid = (lo + hi) // 2
        if counter.count(_centered(cx, cy, *size_for(mid), W, H)) >= want:
            hi = mid
        else:
            lo = mid + 1
    best, best_err = None, None
    for w in range(max(1, lo - 3), lo + 4):
        _, h0 = size_for(w)
        for h in range(max(1, h0 - 3), h0 + 4):
            r = _centered(cx, cy, w, h, W, H)
            err = abs(counter.count(r) - want)
            if best_err is None or err < best_err:
                best, best_err = r, err
    return best


def random_erase_background(img: Image, mask: SegMask, cfg: EraseConfig, rng: np.random.Generator) -> EraseResult:
    """Black rectangles over background pixels only.

    Draws a rectangle count and a total area ratio (of the full image),
    splits the area across rectangles, and sizes each rectangle so the
    background pixels it newly covers match its share. Foreground pixels
    inside a rectangle are left untouched. When the background is smaller
    than the target the result is capped at the available background.
    """
    _check_dims(img, mask)
    W, H = img.width, img.height
    n = int(rng.integers(cfg.rect_count_range[0], cfg.rect_count_range[1] + 1))
    ratio = float(rng.uniform(*cfg.area_ratio_range))
    shares = rng.dirichlet(np.ones(n)) if n > 1 else np.ones(1)
    aspects = np.exp(rng.uniform(math.log(ASPECT_RANGE[0]), math.log(ASPECT_RANGE[1]), size=n))
    erasable = ~mask.foreground
    target = int(round(ratio * W * H))
    erased = np.zeros((H, W), bool)
    rects = []
    if target > 0 and erasable.any():
        counter = _Counter(erasable)
        wants = np.floor(shares * target).astype(int)
        wants[: target - int(wants.sum())] += 1
        for k in range(n):
            avail = erasable & ~erased
            want = int(wants[k])
            if want <= 0 or not avail.any():
                continue
            ys, xs = np.nonzero(avail)
            pick = int(rng.integers(len(xs)))
            counter.update(avail)
            r = _fit_rect(counter, int(xs[pick]), int(ys[pick]), float(aspects[k]), want, W, H)
            x0, y0, x1, y1 = r
            erased[y0:y1, x0:x1] |= avail[y0:y1, x0:x1]
            rects.append(r)
    out = img.pixels.copy()
    out[erased] = 0
    return EraseResult(Image(out), n, ratio, int(erased.sum()), tuple(rects))


def mask_non_targets(img: Image, boxes) -> Image:
    out = img.pixels.copy()
    H, W = out.shape[:2]
    for x0, y0, x1, y1 in boxes:
        x0, x1 = max(0, int(x0)), min(W, int(x1))
        y0, y1 = max(0, int(y0)), min(H, int(y1))
        if x0 < x1 and y0 < y1:
            out[y0:y1, x0:x1] = 0
    return Image(out)


# ---------------------------------------------------------------------------
# Top-down rendering


@dataclass(frozen=True)
class Camera:
    center: tuple  # world (x, y) at the image centre
    extent: float  # side length in meters
    resolution: int

    @property
    def pixel(self) -> float:
        return self.extent / self.resolution

    def to_pixels(self, x0: float, y0: float, x1: float, y1: float) -> tuple:
        """Half-open pixel rectangle of a world-aligned box: every pixel whose centre lies inside.

        Columns run along +x; rows run along -y so the image reads like a map.
        """
        s = self.pixel
        left = self.center[0] - self.extent / 2
        top = self.center[1] + self.extent / 2
        c0 = math.ceil((x0 - left) / s - 0.5)
        c1 = math.floor((x1 - left) / s - 0.5) + 1
        r0 = math.ceil((top - y1) / s - 0.5)
        r1 = math.floor((top - y0) / s - 0.5) + 1
        n = self.resolution
        return (min(max(c0, 0), n), min(max(r0, 0), n), min(max(c1, 0), n), min(max(r1, 0), n))


def render_topdown(
    state: WorldState,
    center: Pose,
    extent: float,
    resolution: int,
    foreground=None,
    draw_gripper: bool = True,
) -> tuple:
    """Orthographic top-down render of object footprints around ``center``.

    ``foreground`` names objects labelled foreground; by default the held
    object. The gripper disc is always foreground when drawn.
    Returns (Image, SegMask).
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    cam = Camera((center.t[0], center.t[1]), float(extent), int(resolution))
    fg_ids = set(foreground or ()) | ({state.held} if state.held else set())
    px = np.empty((resolution, resolution, 3), np.uint8)
    px[:] = TABLE_COLOR
    fg = np.zeros((resolution, resolution), bool)
    order = sorted(state.poses, key=lambda k: (float(state.aabb(k)[1][2]), k))
    for oid in order:
        lo, hi = state.aabb(oid)
        x0, y0, x1, y1 = cam.to_pixels(lo[0], lo[1], hi[0], hi[1])
        if x0 >= x1 or y0 >= y1:
            continue
        px[y0:y1, x0:x1] = state.spec(oid).color
        fg[y0:y1, x0:x1] = oid in fg_ids
    if draw_gripper:
        ex, ey = state.ee_pose.t[0], state.ee_pose.t[1]
        s = cam.pixel
        cols = cam.center[0] - extent / 2 + (np.arange(resolution) + 0.5) * s
        rows = cam.center[1] + extent / 2 - (np.arange(resolution) + 0.5) * s
        disc = (cols[None, :] - ex) ** 2 + (rows[:, None] - ey) ** 2 <= GRIPPER_RADIUS**2
        px[disc] = GRIPPER_COLOR
        fg |= disc
    return Image(px), SegMask(fg)


def non_target_boxes(state: WorldState, center: Pose, extent: float, resolution: int, foreground) -> list:
    """Pixel boxes of every object not named in ``foreground`` (nor held)."""
    cam = Camera((center.t[0], center.t[1]), float(extent), int(resolution))
    keep = set(foreground or ()) | ({state.held} if state.held else set())
    boxes = []
    for oid in sorted(state.poses):
        if oid in keep:
            continue
        lo, hi = state.aabb(oid)
        r = cam.to_pixels(lo[0], lo[1], hi[0], hi[1])
        if r[0] < r[2] and r[1] < r[3]:
            boxes.append(r)
    return boxes


# ---------------------------------------------------------------------------
# PPM / PGM


def _read_netpbm(data: bytes, magic: bytes, source: str):
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(data, pos)
        pos = m.end()
        m = re.compile(rb"\S+").match(data, pos)
        if m is None:
            raise RasterFormatError(f"{source}: truncated header")
        tokens.append(m.group())
        pos = m.end()
    if tokens[0] != magic:
        raise RasterFormatError(f"{source}: expected {magic.decode()} got {tokens[0][:2].decode(errors='replace')}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise RasterFormatError(f"{source}: bad header numbers") from None
    if maxval != 255:
        raise RasterFormatError(f"{source}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte before the raster
    return w, h, data[pos:]


def read_ppm(path) -> Image:
    path = Path(path)
    w, h, body = _read_netpbm(path.read_bytes(), b"P6", str(path))
    if len(body) < w * h * 3:
        raise RasterFormatError(f"{path}: raster too short")
    return Image(np.frombuffer(body[: w * h * 3], np.uint8).reshape(h, w, 3).copy())


def write_ppm(path, img: Image) -> None:
    Path(path).write_bytes(f"P6\n{img.width} {img.height}\n255\n".encode() + img.pixels.tobytes())


def read_pgm_mask(path) -> SegMask:
    path = Path(path)
    w, h, body = _read_netpbm(path.read_bytes(), b"P5", str(path))
    if len(body) < w * h:
        raise RasterFormatError(f"{path}: raster too short")
    return SegMask(np.frombuffer(body[: w * h], np.uint8).reshape(h, w) > 0)


def write_pgm_mask(path, mask: SegMask) -> None:
    body = (mask.foreground.astype(np.uint8) * 255).tobytes()
    Path(path).write_bytes(f"P5\n{mask.width} {mask.height}\n255\n".encode() + body)


# ---------------------------------------------------------------------------
# Corpus processing


def image_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{name}".encode()).digest()[:8], "little")


def _mask_for(img_path: Path, img: Image) -> tuple:
    for cand in (img_path.with_suffix(".pgm"), img_path.with_name(img_path.stem + "_mask.pgm")):
        if cand.is_file():
            return read_pgm_mask(cand), cand.name
    return SegMask.empty(img.width, img.height), None


def process_corpus(in_dir, out_dir, cfg: EraseConfig, seed: int, workers: int = 1) -> dict:
    """Apply random erasing to every ``*.ppm`` under ``in_dir``; masks are ``<stem>.pgm``
    or ``<stem>_mask.pgm`` beside the image (missing means all background)."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(in_dir.glob("*.ppm"))

    def one(p: Path) -> dict:
        img = read_ppm(p)
        mask, mask_name = _mask_for(p, img)
        s = image_seed(seed, p.name)
        res = random_erase_background(img, mask, cfg, np.random.default_rng(s))
        write_ppm(out_dir / p.name, res.image)
        return {"file": p.name, "mask": mask_name, "seed": s, **res.to_dict()}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(one, paths))
    else:
        entries = [one(p) for p in paths]
    manifest = {"seed": seed, "config": cfg.to_dict(), "images": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
