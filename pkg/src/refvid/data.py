"""Synthetic video generation with analytic optical flow, and clip IO.

Clips are directories of binary PPM (P6) frames named frame_%05d.ppm plus
a meta.json {"fps": int, "caption": str}. Synthetic scenes additionally
persist their scene.json so analytic flow targets can be reconstructed for
temporal-SR training.

Pixels live in [-1, 1]; the uint8 mapping u = round((x+1)*127.5) round-trips
exactly for values drawn from the 8-bit palette the generator uses.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClipFormatError, ContractError

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 220, 50),
    "cyan": (60, 210, 220),
    "magenta": (210, 60, 200),
    "white": (245, 245, 245),
    "gray": (128, 128, 128),
}

BACKGROUNDS = {
    "black": (10, 10, 10),
    "dark blue": (20, 25, 60),
    "dark green": (15, 45, 25),
    "dark gray": (45, 45, 45),
}


def _u8_to_unit(u: np.ndarray) -> np.ndarray:
    return (u.astype(np.float32) / 127.5) - 1.0


def _unit_to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class ShapeSpec:
    kind: str                       # "square" or "circle"
    size: int                       # bounding-box side in pixels
    color: tuple[int, int, int]     # 8-bit RGB
    start: tuple[float, float]      # top-left (x, y) at t = 0
    velocity: tuple[float, float]   # pixels per frame (vx, vy)

    def __post_init__(self):
        if self.kind not in ("square", "circle"):
            raise ContractError(f"shape kind must be square or circle, got {self.kind!r}")
        if self.size < 1:
            raise ContractError(f"shape size must be >= 1, got {self.size}")
        if not all(np.isfinite(self.velocity)):
            raise ContractError("shape velocity must be finite")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int
    height: int
    shapes: tuple[ShapeSpec, ...]
    background: tuple[int, int, int] = (10, 10, 10)
    num_frames: int = 16
    fps: int = 8

    def __post_init__(self):
        if self.num_frames < 1:
            raise ContractError("scene needs at least one frame")
        if self.fps < 1:
            raise ContractError("fps must be >= 1")


@dataclass
class VideoClip:
    frames: np.ndarray              # [T, 3, H, W] float32 in [-1, 1]
    fps: int
    caption: str | None = None

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ContractError(f"frames must be [T,3,H,W], got {self.frames.shape}")
        if self.fps < 1:
            raise ContractError("fps must be >= 1")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _shape_position(shape: ShapeSpec, t: float, width: int, height: int) -> tuple[float, float]:
    """Top-left position at (possibly fractional) time t, clamped to the canvas."""
    x = shape.start[0] + shape.velocity[0] * t
    y = shape.start[1] + shape.velocity[1] * t
    x = float(np.clip(x, 0.0, width - shape.size))
    y = float(np.clip(y, 0.0, height - shape.size))
    return x, y


def _shape_mask(shape: ShapeSpec, t: float, width: int, height: int) -> np.ndarray:
    x, y = _shape_position(shape, t, width, height)
    xi, yi = int(round(x)), int(round(y))
    mask = np.zeros((height, width), dtype=bool)
    if shape.kind == "square":
        mask[yi:yi + shape.size, xi:xi + shape.size] = True
    else:
        r = shape.size / 2.0
        cy, cx = yi + r - 0.5, xi + r - 0.5
        yy, xx = np.mgrid[0:height, 0:width]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return mask


def render_frame(spec: SyntheticSceneSpec, t: float) -> np.ndarray:
    """Render the scene at time t as [3, H, W] float32 in [-1, 1]."""
    frame = np.empty((3, spec.height, spec.width), dtype=np.float32)
    for c in range(3):
        frame[c] = _u8_to_unit(np.array(spec.background[c], dtype=np.uint8))
    for shape in spec.shapes:
        mask = _shape_mask(shape, t, spec.width, spec.height)
        for c in range(3):
            frame[c][mask] = _u8_to_unit(np.array(shape.color[c], dtype=np.uint8))
    return frame


def analytic_flow_field(spec: SyntheticSceneSpec, t_grid: float, t_src: float) -> np.ndarray:
    """Pixel-space flow [2, H, W] mapping the grid at t_grid into frame t_src.

    Backward-warp convention: a pixel covered by a shape at t_grid carries
    the displacement (t_src - t_grid) * velocity; background pixels carry
    zero. Later shapes overwrite earlier ones, matching render order.
    """
    flow = np.zeros((2, spec.height, spec.width), dtype=np.float32)
    dt = t_src - t_grid
    for shape in spec.shapes:
        mask = _shape_mask(shape, t_grid, spec.width, spec.height)
        flow[0][mask] = dt * shape.velocity[0]
        flow[1][mask] = dt * shape.velocity[1]
    return flow


def caption_for(spec: SyntheticSceneSpec) -> str:
    """Auto-caption from the first shape, e.g. 'red square moving right'."""
    if not spec.shapes:
        return "empty scene"
    shape = spec.shapes[0]
    color = min(PALETTE, key=lambda n: sum((a - b) ** 2 for a, b in zip(PALETTE[n], shape.color)))
    vx, vy = shape.velocity
    if vx == 0 and vy == 0:
        motion = "standing still"
    elif abs(vx) >= abs(vy):
        motion = "moving right" if vx > 0 else "moving left"
    else:
        motion = "moving down" if vy > 0 else "moving up"
    return f"{color} {shape.kind} {motion}"


def generate_synthetic(spec: SyntheticSceneSpec, seed: int = 0):
    """Render a scene into (VideoClip, per-pair pixel flows, caption).

    Rendering is a pure function of the spec; the seed is accepted for
    interface stability and reproducibility bookkeeping. The i-th flow
    field maps the grid at frame i into frame i+1.
    """
    frames = np.stack([render_frame(spec, float(t)) for t in range(spec.num_frames)])
    flows = [analytic_flow_field(spec, float(i), float(i + 1)) for i in range(spec.num_frames - 1)]
    caption = caption_for(spec)
    return VideoClip(frames=frames, fps=spec.fps, caption=caption), flows, caption


def random_scene_spec(rng: np.random.Generator, width: int = 64, height: int = 64,
                      num_frames: int = 16, fps: int = 8,
                      max_speed: int = 2) -> SyntheticSceneSpec:
    """Draw a one-object scene whose motion stays inside the canvas."""
    kind = "square" if rng.random() < 0.5 else "circle"
    size = int(rng.integers(max(8, width // 8), width // 3 + 1))
    color = PALETTE[list(PALETTE)[rng.integers(len(PALETTE))]]
    background = BACKGROUNDS[list(BACKGROUNDS)[rng.integers(len(BACKGROUNDS))]]
    vx = int(rng.integers(-max_speed, max_speed + 1))
    vy = int(rng.integers(-max_speed, max_speed + 1))
    travel_x = vx * (num_frames - 1)
    travel_y = vy * (num_frames - 1)
    x_lo, x_hi = max(0, -travel_x), min(width - size, width - size - travel_x)
    y_lo, y_hi = max(0, -travel_y), min(height - size, height - size - travel_y)
    if x_hi < x_lo or y_hi < y_lo:       # too fast to stay inside; drop to static
        vx = vy = 0
        x_lo, x_hi = 0, width - size
        y_lo, y_hi = 0, height - size
    x0 = int(rng.integers(x_lo, x_hi + 1))
    y0 = int(rng.integers(y_lo, y_hi + 1))
    return SyntheticSceneSpec(
        width=width, height=height,
        shapes=(ShapeSpec(kind=kind, size=size, color=color, start=(x0, y0),
                          velocity=(vx, vy)),),
        background=background, num_frames=num_frames, fps=fps)


def first_frame_reference(clip: VideoClip) -> np.ndarray:
    """Frame 0 unmodified, [3, H, W] — the training-time reference image."""
    return clip.frames[0]


@dataclass
class TsrPairs:
    """Even-frame inputs and the skipped odd-frame targets, as latents."""

    low: np.ndarray        # [Tl, C, h, w]
    targets: np.ndarray    # [Tl - 1, C, h, w]
    low_fps: int


def make_tsr_pairs(clip: VideoClip, encode, stride: int = 2) -> TsrPairs:
    """Split a clip into low-FPS latents and midframe targets.

    `encode` maps pixel frames [T,3,H,W] to latents [T,C,h,w]. T must be
    odd (>= 3) so every adjacent low-FPS pair has its true midframe.
    """
    if stride != 2:
        raise ContractError(f"only stride 2 is supported, got {stride}")
    t = clip.num_frames
    if t < 3:
        raise ContractError(f"need at least 3 frames for TSR pairs, got {t}")
    if t % 2 == 0:
        raise ContractError(f"need an odd frame count so midframes exist, got {t}")
    low = encode(clip.frames[0::2])
    targets = encode(clip.frames[1::2])
    return TsrPairs(low=np.asarray(low), targets=np.asarray(targets), low_fps=clip.fps // stride)


# -- PPM and clip-directory IO --------------------------------------------------

def write_ppm(path, frame_u8: np.ndarray) -> None:
    """Write [H, W, 3] uint8 as binary P6 with maxval 255."""
    h, w, _ = frame_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame_u8.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ClipFormatError(f"{path}: not a binary P6 PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ClipFormatError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise ClipFormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    if pixels.size != w * h * 3:
        raise ClipFormatError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).copy()


def save_clip(clip: VideoClip, outdir, force: bool = False) -> None:
    out = Path(outdir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ClipFormatError(f"{out}: already exists and is not empty (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_ppm(out / f"frame_{i:05d}.ppm", _unit_to_u8(frame).transpose(1, 2, 0))
    meta = {"fps": clip.fps, "caption": clip.caption or ""}
    (out / "meta.json").write_text(json.dumps(meta, indent=1))


def load_clip(clipdir, factor: int | None = None) -> VideoClip:
    """Load a clip directory; frames must be contiguously indexed from 0.

    With `factor` given, rejects frame sizes not divisible by it (the codec
    cannot encode them) with guidance on valid sizes.
    """
    d = Path(clipdir)
    if not d.is_dir():
        raise ClipFormatError(f"{d}: not a directory")
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise ClipFormatError(f"{d}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    if not isinstance(meta.get("fps"), int) or meta["fps"] < 1:
        raise ClipFormatError(f"{meta_path}: 'fps' must be a positive integer")

    pattern = re.compile(r"frame_(\d{5})\.ppm$")
    indexed = {}
    for p in d.iterdir():
        m = pattern.match(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise ClipFormatError(f"{d}: no frame_%05d.ppm files found")
    for i in range(len(indexed)):
        if i not in indexed:
            raise ClipFormatError(f"{d}: frame index {i} missing (indices must be contiguous from 0)")

    frames = []
    shape = None
    for i in range(len(indexed)):
        img = read_ppm(indexed[i])
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ClipFormatError(f"{indexed[i]}: frame size {img.shape} differs from {shape}")
        frames.append(_u8_to_unit(img).transpose(2, 0, 1))
    h, w = shape[0], shape[1]
    if factor is not None and (h % factor or w % factor):
        raise ClipFormatError(
            f"{d}: frame size {w}x{h} not divisible by the codec factor {factor}; "
            f"resize frames to multiples of {factor}")
    caption = meta.get("caption") or None
    return VideoClip(frames=np.stack(frames), fps=meta["fps"], caption=caption)


def save_scene(spec: SyntheticSceneSpec, path) -> None:
    doc = asdict(spec)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_scene(path) -> SyntheticSceneSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{path}: invalid scene JSON: {exc}") from exc
    try:
        shapes = tuple(
            ShapeSpec(kind=s["kind"], size=s["size"], color=tuple(s["color"]),
                      start=tuple(s["start"]), velocity=tuple(s["velocity"]))
            for s in doc["shapes"])
        return SyntheticSceneSpec(
            width=doc["width"], height=doc["height"], shapes=shapes,
            background=tuple(doc["background"]), num_frames=doc["num_frames"],
            fps=doc["fps"])
    except (KeyError, TypeError) as exc:
        raise ClipFormatError(f"{path}: scene JSON missing field: {exc}") from exc
