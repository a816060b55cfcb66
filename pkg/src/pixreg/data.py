"""Image I/O, dataset layout, patch sampling and synthetic vessel images."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .labeling import component_sizes


class DataError(Exception):
    """Unreadable, inconsistent or missing dataset content."""


# ---------------------------------------------------------------- image files


def _read_pgm(data: bytes, path) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise DataError(f"{path}: only binary PGM (P5) is supported")
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: corrupt PGM header") from None
    if maxval > 255:
        raise DataError(f"{path}: {maxval=} implies 16-bit samples; only 8-bit is supported")
    if maxval != 255:
        raise DataError(f"{path}: expected maxval 255, got {maxval}")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise DataError(f"{path}: PGM raster is truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise DataError(f"{path}: {mode} PNG is not 8-bit; only 8-bit is supported")
            if mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"))[:, :, 1]  # green channel
            elif mode in ("L", "P", "1", "LA"):
                arr = np.asarray(im.convert("L"))
            else:
                raise DataError(f"{path}: unsupported PNG mode {mode}")
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    return arr.astype(np.uint8)


def read_raw(path) -> np.ndarray:
    """8-bit grayscale pixels (0..255) from a PGM or PNG file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    data = path.read_bytes()
    if data[:2] == b"P5" or path.suffix.lower() == ".pgm":
        return _read_pgm(data, path)
    return _read_png(path)


def load_grayscale(path) -> np.ndarray:
    """Float image in [0, 1] (raw / 255). RGB PNGs yield their green channel."""
    return read_raw(path).astype(np.float64) / 255.0


def load_mask(path) -> np.ndarray:
    return (load_grayscale(path) >= 0.5).astype(np.float64)


def to_uint8(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def save_pgm(path, img):
    """Write a [0, 1] image as 8-bit binary PGM."""
    raw = to_uint8(img)
    h, w = raw.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + raw.tobytes())


def save_png(path, img):
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def save_image(path, img):
    if Path(path).suffix.lower() == ".png":
        save_png(path, img)
    else:
        save_pgm(path, img)


# ---------------------------------------------------------------- dataset layout


@dataclass
class ImageSample:
    image: np.ndarray
    mask: np.ndarray
    fov: np.ndarray | None = None
    stem: str = ""

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(f"{self.stem}: image {self.image.shape} vs mask {self.mask.shape}")
        if self.fov is not None and self.fov.shape != self.image.shape:
            raise DataError(f"{self.stem}: fov {self.fov.shape} vs image {self.image.shape}")


MANIFEST = "manifest.txt"
IMAGE_SUFFIXES = (".pgm", ".png")


def parse_manifest(text: str) -> dict[str, list[str]]:
    """``train:`` / ``test:`` section headers, one stem per line below them."""
    splits: dict[str, list[str]] = {"train": [], "test": []}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.endswith(":"):
            current = line[:-1].strip().lower()
            if current not in splits:
                raise DataError(f"manifest line {lineno}: unknown section {line!r}")
        elif current is None:
            raise DataError(f"manifest line {lineno}: stem outside a section")
        else:
            splits[current].append(line)
    return splits


def format_manifest(train: list[str], test: list[str]) -> str:
    return "\n".join(["train:", *train, "test:", *test]) + "\n"


@dataclass
class DatasetLayout:
    root: Path
    splits: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def open(cls, root) -> DatasetLayout:
        root = Path(root)
        manifest = root / MANIFEST
        if not manifest.is_file():
            raise DataError(f"{root}: missing {MANIFEST}")
        return cls(root, parse_manifest(manifest.read_text()))

    def _find(self, sub: str, stem: str, required: bool = True) -> Path | None:
        for suffix in IMAGE_SUFFIXES:
            path = self.root / sub / f"{stem}{suffix}"
            if path.is_file():
                return path
        if required:
            raise DataError(f"{self.root / sub}: no image for stem {stem!r}")
        return None

    def load(self, stem: str) -> ImageSample:
        image = load_grayscale(self._find("images", stem))
        mask = load_mask(self._find("masks", stem))
        fov_path = self._find("fov", stem, required=False)
        fov = load_mask(fov_path).astype(bool) if fov_path else None
        return ImageSample(image, mask, fov, stem)

    def load_split(self, split: str) -> list[ImageSample]:
        return [self.load(stem) for stem in self.splits.get(split, [])]


def write_dataset(root, train: list[ImageSample], test: list[ImageSample]):
    root = Path(root)
    for sub in ("images", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in [*train, *test]:
        save_pgm(root / "images" / f"{s.stem}.pgm", s.image)
        save_pgm(root / "masks" / f"{s.stem}.pgm", s.mask)
        if s.fov is not None:
            (root / "fov").mkdir(exist_ok=True)
            save_pgm(root / "fov" / f"{s.stem}.pgm", s.fov)
    (root / MANIFEST).write_text(format_manifest([s.stem for s in train], [s.stem for s in test]))


# ---------------------------------------------------------------- patches


@dataclass(frozen=True)
class PatchSpec:
    size: int = 48
    count: int = 4750
    seed: int = 0


def patch_corners(shape, size: int, fov=None) -> np.ndarray:
    """All admissible top-left corners as an (K, 2) array in row-major order."""
    h, w = shape
    if size > min(h, w):
        raise DataError(f"patch size {size} exceeds image {h}x{w}")
    rr, cc = np.mgrid[0 : h - size + 1, 0 : w - size + 1]
    corners = np.stack([rr.ravel(), cc.ravel()], axis=1)
    if fov is not None:
        half = size // 2
        inside = np.asarray(fov, dtype=bool)[corners[:, 0] + half, corners[:, 1] + half]
        corners = corners[inside]
        if len(corners) == 0:
            raise DataError("field of view excludes every patch centre")
    return corners


def sample_patches(sample: ImageSample, spec: PatchSpec, rng=None):
    """Draw ``spec.count`` patches with replacement, uniform over admissible corners.

    Returns (images, masks) arrays of shape (count, size, size).
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    corners = patch_corners(sample.image.shape, spec.size, sample.fov)
    picks = corners[rng.integers(0, len(corners), size=spec.count)]
    offs = np.arange(spec.size)
    rows = (picks[:, 0, None] + offs)[:, :, None]
    cols = (picks[:, 1, None] + offs)[:, None, :]
    return sample.image[rows, cols].copy(), sample.mask[rows, cols].copy()


def patch_dataset(samples: list[ImageSample], spec: PatchSpec):
    """Patches from every sample, each image with its own seeded stream."""
    images, masks = [], []
    for k, s in enumerate(samples):
        x, t = sample_patches(s, spec, np.random.default_rng([spec.seed, k]))
        images.append(x)
        masks.append(t)
    return np.concatenate(images), np.concatenate(masks)


# ---------------------------------------------------------------- synthetic vessels


def _box_blur(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    return sum(p[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)) / 9.0


def _stroke(mask, rng, start, heading, width, steps, branches):
    h, w = mask.shape
    pos = np.array(start, dtype=float)
    turn = 0.0
    r = (width - 1) / 2
    path = []
    for _ in range(steps):
        turn = 0.8 * turn + rng.normal(0, 0.06)
        heading += turn
        pos += 0.8 * np.array([np.sin(heading), np.cos(heading)])
        if not (0 <= pos[0] < h and 0 <= pos[1] < w):
            break
        path.append((pos.copy(), heading))
        r0, c0 = int(round(pos[0] - r)), int(round(pos[1] - r))
        mask[max(r0, 0) : max(r0 + width, 0), max(c0, 0) : max(c0 + width, 0)] = 1.0
    if branches and len(path) > 10:
        for _ in range(branches):
            p, hd = path[rng.integers(len(path) // 4, len(path))]
            side = rng.choice([-1.0, 1.0])
            _stroke(mask, rng, p, hd + side * rng.uniform(0.4, 1.1), max(width - 1, 1), steps // 2, 0)


def synth_vessels(seed: int, shape=(64, 64)) -> ImageSample:
    """A fundus-like grayscale image with a binary vessel mask.

    Vessels are momentum random walks stroked 1-3 px wide, with side branches.
    The image darkens vessels on a smooth background gradient and adds
    Gaussian noise (sigma 0.05). Foreground fraction lies in [2%, 25%].
    """
    h, w = shape
    if h < 64 or w < 64:
        raise ValueError(f"synthetic images need at least 64x64, got {h}x{w}")
    rng = np.random.default_rng(seed)
    mask = np.zeros((h, w))
    n_vessels = int(rng.integers(2, 7))
    drawn = 0
    while True:
        if drawn >= n_vessels:
            frac = mask.mean()
            if frac >= 0.02 and component_sizes(mask).max(initial=0) >= 20:
                break
        # enter from a random border point, heading inwards
        side = rng.integers(4)
        u = rng.uniform(0.1, 0.9)
        start, heading = {
            0: ((0.0, u * w), np.pi / 2),
            1: ((h - 1.0, u * w), -np.pi / 2),
            2: ((u * h, 0.0), 0.0),
            3: ((u * h, w - 1.0), np.pi),
        }[side]
        heading += rng.uniform(-0.6, 0.6)
        trial = mask.copy()
        _stroke(trial, rng, start, heading, int(rng.integers(1, 4)), 2 * max(h, w), int(rng.integers(0, 3)))
        if trial.mean() <= 0.25:
            mask = trial
        drawn += 1

    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    gx, gy = rng.uniform(-0.2, 0.2, size=2)
    background = 0.55 + gx * (xx - 0.5) + gy * (yy - 0.5)
    vessels = _box_blur(_box_blur(mask))
    image = background - 0.35 * vessels + rng.normal(0, 0.05, size=(h, w))
    return ImageSample(np.clip(image, 0, 1), mask, None, f"synth{seed:04d}")


def synthetic_split(count: int, seed: int, shape=(64, 64)) -> tuple[list[ImageSample], list[ImageSample]]:
    """``count`` synthetic samples split into train and test halves.

    Image k uses generator seed ``seed * 1000 + k``; the last ``count // 2``
    images form the test split (none when count < 2).
    """
    samples = [synth_vessels(seed * 1000 + k, shape) for k in range(count)]
    for k, s in enumerate(samples):
        s.stem = f"s{seed}_{k:03d}"
    n_test = count // 2
    return samples[: count - n_test], samples[count - n_test :]
