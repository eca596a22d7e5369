"""Image loading, patch extraction, and synthetic data generation.

Images are float64 arrays in [0, 1], grayscale (h, w) or RGB (h, w, 3).
Patches vectorize column-major per channel with channels concatenated, so a
2x2 patch [[a, b], [c, d]] becomes (a, c, b, d).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    CorruptImage,
    DimensionMismatch,
    EmptyClass,
    ImageTooSmall,
    NoValidPlacement,
    ShapeMismatch,
    UnsupportedFormat,
    UpsampleRequested,
)
from .model import TrainingSet

_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class ImageBuffer:
    """Validated image: float64 pixels in [0, 1], (h, w) or (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ShapeMismatch(f"expected (h, w) or (h, w, 3), got {arr.shape}")
        if arr.size == 0:
            raise ShapeMismatch("empty image")
        if not np.all(np.isfinite(arr)):
            raise CorruptImage("image contains non-finite pixels")
        if arr.min() < -_RANGE_TOL or arr.max() > 1.0 + _RANGE_TOL:
            raise CorruptImage(
                f"pixels outside [0, 1]: range [{arr.min()}, {arr.max()}]")
        object.__setattr__(self, "pixels", np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass(frozen=True)
class RegionMask:
    """Boolean (h, w) mask; True marks pixels patches may cover."""

    mask: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mask)
        if arr.ndim != 2 or arr.dtype != bool:
            raise ShapeMismatch("mask must be a 2-D boolean array")
        object.__setattr__(self, "mask", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def center_mask(height: int, width: int) -> RegionMask:
    """Centered box covering half of each dimension."""
    mh, mw = height // 2, width // 2
    if mh == 0 or mw == 0:
        raise ImageTooSmall(f"{height}x{width} image too small for a centered mask")
    top, left = (height - mh) // 2, (width - mw) // 2
    m = np.zeros((height, width), dtype=bool)
    m[top:top + mh, left:left + mw] = True
    return RegionMask(m)


_GRAY_MODES_8 = ("L",)
_GRAY_MODES_16 = ("I;16", "I;16L", "I;16B", "I;16N", "I")


def load_image(path) -> ImageBuffer:
    """Read a PNG or TIFF file, scaling 8-bit by 1/255 and 16-bit by 1/65535."""
    try:
        with Image.open(path) as im:
            im.load()
            fmt = im.format
            if fmt not in ("PNG", "TIFF"):
                raise UnsupportedFormat(f"{path}: format {fmt!r} (want PNG or TIFF)")
            if im.mode == "P":
                im = im.convert("RGB")
            elif im.mode == "RGBA":
                im = im.convert("RGB")
            elif im.mode == "LA":
                im = im.convert("L")
            if im.mode in _GRAY_MODES_8 or im.mode == "RGB":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif im.mode in _GRAY_MODES_16:
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                raise UnsupportedFormat(f"{path}: pixel mode {im.mode!r}")
    except FileNotFoundError:
        raise
    except UnidentifiedImageError as e:
        raise CorruptImage(f"{path}: {e}") from e
    except (OSError, SyntaxError) as e:
        raise CorruptImage(f"{path}: {e}") from e
    return ImageBuffer(arr)


def save_image(path, image: ImageBuffer) -> None:
    """Write a 16-bit grayscale or 8-bit RGB PNG."""
    arr = image.pixels
    if image.channels == 1:
        data = np.round(arr * 65535.0).astype(np.uint16)
        # uint16 arrays land in mode I;16 without the deprecated mode kwarg
        Image.fromarray(data).save(path, format="PNG")
    else:
        data = np.round(arr * 255.0).astype(np.uint8)
        Image.fromarray(data).save(path, format="PNG")


def to_grayscale(image: ImageBuffer) -> ImageBuffer:
    """Rec.601 luminance: 0.299 R + 0.587 G + 0.114 B."""
    if image.channels == 1:
        return image
    return ImageBuffer(image.pixels @ np.array([0.299, 0.587, 0.114]))


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) exact box-overlap weights with unit row sums.

    Output cell i averages the input interval [i*s, (i+1)*s), s = n_in/n_out,
    with fractional end pixels weighted by their overlap length.
    """
    scale = n_in / n_out
    W = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            W[i, j] = min(hi, j + 1.0) - max(lo, j)
    return W / W.sum(axis=1, keepdims=True)


def downsample(image: ImageBuffer, target_w: int, target_h: int) -> ImageBuffer:
    """Separable exact area (box) downsampling to target_w x target_h."""
    h, w = image.height, image.width
    if target_h <= 0 or target_w <= 0:
        raise ShapeMismatch(f"target {target_w}x{target_h} is empty")
    if target_h > h or target_w > w:
        raise UpsampleRequested(
            f"target {target_w}x{target_h} exceeds source {w}x{h}")
    if (target_h, target_w) == (h, w):
        return image
    Wr = _box_weights(h, target_h)
    Wc = _box_weights(w, target_w)
    if image.channels == 1:
        return ImageBuffer(Wr @ image.pixels @ Wc.T)
    out = np.stack([Wr @ image.pixels[:, :, c] @ Wc.T for c in range(3)], axis=2)
    return ImageBuffer(out)


def vectorize_patch(patch: np.ndarray) -> np.ndarray:
    """Column-major flattening per channel, channels concatenated."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        return patch.ravel(order="F")
    return np.concatenate([patch[:, :, c].ravel(order="F")
                           for c in range(patch.shape[2])])


def devectorize_patch(vec: np.ndarray, size: int, channels: int = 1) -> np.ndarray:
    """Inverse of :func:`vectorize_patch` for square patches."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != size * size * channels:
        raise ShapeMismatch(f"vector of {vec.size} is not {size}x{size}x{channels}")
    if channels == 1:
        return vec.reshape(size, size, order="F")
    planes = [vec[c * size * size:(c + 1) * size * size].reshape(size, size, order="F")
              for c in range(channels)]
    return np.stack(planes, axis=2)


class GridPatches(NamedTuple):
    """Row-major vectorized patches of a non-overlapping grid."""

    patches: np.ndarray  # (rows*cols, d)
    rows: int
    cols: int


def extract_grid_patches(image: ImageBuffer, size: int) -> GridPatches:
    """Tile the image with non-overlapping size x size patches.

    The grid is floor(h/size) x floor(w/size), anchored at the top-left;
    leftover border pixels are dropped. Patches come back row-major.
    """
    if size <= 0:
        raise ShapeMismatch("patch size must be positive")
    rows, cols = image.height // size, image.width // size
    if rows == 0 or cols == 0:
        raise ImageTooSmall(
            f"{image.height}x{image.width} image holds no {size}x{size} patches")
    out = np.empty((rows * cols, size * size * image.channels))
    for r in range(rows):
        for c in range(cols):
            block = image.pixels[r * size:(r + 1) * size, c * size:(c + 1) * size]
            out[r * cols + c] = vectorize_patch(block)
    return GridPatches(out, rows, cols)


def tile_patches(patches: np.ndarray, rows: int, cols: int, size: int,
                 channels: int = 1) -> ImageBuffer:
    """Assemble row-major vectorized patches back into one image."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] != rows * cols:
        raise ShapeMismatch(f"{patches.shape[0]} patches != {rows}x{cols} grid")
    shape = (rows * size, cols * size) if channels == 1 else (rows * size, cols * size, 3)
    out = np.zeros(shape)
    for r in range(rows):
        for c in range(cols):
            block = devectorize_patch(patches[r * cols + c], size, channels)
            out[r * size:(r + 1) * size, c * size:(c + 1) * size] = block
    return ImageBuffer(out)


def _valid_anchors(height: int, width: int, size: int,
                   mask: RegionMask | None) -> np.ndarray:
    """(m, 2) top-left corners whose patch lies fully inside image and mask."""
    nh, nw = height - size + 1, width - size + 1
    if mask is None:
        ii, jj = np.meshgrid(np.arange(nh), np.arange(nw), indexing="ij")
        return np.column_stack([ii.ravel(), jj.ravel()])
    if mask.shape != (height, width):
        raise ShapeMismatch(f"mask {mask.shape} does not match image "
                            f"{(height, width)}")
    # Integral image of the complement: a window is valid iff it covers
    # zero masked-out pixels.
    bad = np.zeros((height + 1, width + 1), dtype=np.int64)
    bad[1:, 1:] = np.cumsum(np.cumsum(~mask.mask, axis=0), axis=1)
    cover = (bad[size:, size:] - bad[size:, :-size]
             - bad[:-size, size:] + bad[:-size, :-size])
    return np.argwhere(cover[:nh, :nw] == 0)


def extract_random_patches(image: ImageBuffer, n: int, size: int,
                           mask: RegionMask | None = None,
                           seed=0) -> np.ndarray:
    """(n, d) patches sampled uniformly with replacement, seeded.

    Placements are drawn from the set of top-left anchors whose size x size
    window lies entirely inside the image and, when a mask is given,
    entirely within its True region. `seed` may be an int or a Generator.
    """
    if size <= 0 or n <= 0:
        raise ShapeMismatch("n and size must be positive")
    if size > image.height or size > image.width:
        raise ImageTooSmall(
            f"{size}x{size} patch does not fit a {image.height}x{image.width} image")
    anchors = _valid_anchors(image.height, image.width, size, mask)
    if anchors.shape[0] == 0:
        raise NoValidPlacement(f"mask admits no {size}x{size} patch")
    rng = np.random.default_rng(seed)
    picks = anchors[rng.integers(0, anchors.shape[0], size=n)]
    out = np.empty((n, size * size * image.channels))
    for t, (i, j) in enumerate(picks):
        out[t] = vectorize_patch(image.pixels[i:i + size, j:j + size])
    return out


def build_training_set(per_class_patches: list[np.ndarray]) -> TrainingSet:
    """Stack per-class (N_c, d) patch batches into a TrainingSet.

    The mean template is computed over all columns of all classes pooled
    together (TrainingSet's default).
    """
    if not per_class_patches:
        raise EmptyClass("no classes given")
    mats = []
    for c, P in enumerate(per_class_patches):
        P = np.asarray(P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] == 0:
            raise EmptyClass(f"class {c} has no patches")
        mats.append(np.ascontiguousarray(P.T))
    return TrainingSet(mats)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the subspace-mixture generator."""

    dim: int
    num_classes: int
    class_dim: int
    shared_dim: int
    per_class: int
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.dim, self.num_classes, self.class_dim, self.per_class) < 1:
            raise DimensionMismatch(
                "dim, num_classes, class_dim, per_class must be >= 1")
        if self.shared_dim < 0 or self.noise_sigma < 0:
            raise ValueError("shared_dim and noise_sigma must be >= 0")
        total = self.num_classes * self.class_dim + self.shared_dim
        if total > self.dim:
            raise DimensionMismatch(
                f"subspace dims sum to {total} > ambient dim {self.dim}")


class SynthData(NamedTuple):
    data: TrainingSet
    labels: np.ndarray             # class index per column of the pooled data
    class_bases: list[np.ndarray]  # each (dim, class_dim), orthonormal
    shared_basis: np.ndarray       # (dim, shared_dim), orthonormal


def synth_generate(spec: SynthSpec) -> SynthData:
    """Sample patches from mutually orthogonal class and shared subspaces.

    One QR factorization of a seeded Gaussian matrix yields an orthonormal
    frame; consecutive column blocks become the class bases and the shared
    basis, so subspaces are exactly disjoint. Each sample combines a
    class-subspace component and a shared component (both with unit-norm
    random coefficients) plus white Gaussian noise of scale noise_sigma.
    """
    rng = np.random.default_rng(spec.seed)
    total = spec.num_classes * spec.class_dim + spec.shared_dim
    Q = np.linalg.qr(rng.standard_normal((spec.dim, total)))[0]
    bases = [Q[:, c * spec.class_dim:(c + 1) * spec.class_dim]
             for c in range(spec.num_classes)]
    B0 = Q[:, spec.num_classes * spec.class_dim:]

    def unit_cols(k: int, n: int) -> np.ndarray:
        U = rng.standard_normal((k, n))
        return U / np.linalg.norm(U, axis=0, keepdims=True)

    per_class = []
    for c in range(spec.num_classes):
        Y = bases[c] @ unit_cols(spec.class_dim, spec.per_class)
        if spec.shared_dim:
            Y = Y + B0 @ unit_cols(spec.shared_dim, spec.per_class)
        if spec.noise_sigma:
            Y = Y + spec.noise_sigma * rng.standard_normal(Y.shape)
        per_class.append(Y)
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
    return SynthData(TrainingSet(per_class), labels, bases, B0)
