"""Signature image preprocessing: decode, binarize, crop, thin, label.

All operations are pure functions on immutable inputs.  Images are stored
as row-major numpy arrays (shape ``(height, width)``); gray values follow
the scanned-paper convention 0 = black ink, 255 = white paper.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import EmptyImageError, EmptyInkError, UnreadableImageError

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster with optional dots-per-inch metadata."""

    pixels: np.ndarray  # uint8, shape (h, w)
    dpi: int | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.size == 0:
            raise EmptyImageError("gray image must be a non-empty 2-D array")
        object.__setattr__(self, "pixels", px)
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BinaryImage:
    """Boolean ink mask (True = ink)."""

    ink: np.ndarray  # bool, shape (h, w)

    def __post_init__(self):
        ink = np.asarray(self.ink, dtype=bool)
        if ink.ndim != 2 or ink.size == 0:
            raise EmptyImageError("binary image must be a non-empty 2-D array")
        object.__setattr__(self, "ink", ink)
        ink.setflags(write=False)

    @property
    def width(self) -> int:
        return self.ink.shape[1]

    @property
    def height(self) -> int:
        return self.ink.shape[0]

    @property
    def ink_count(self) -> int:
        return int(self.ink.sum())


def load_signature(path) -> GrayImage:
    """Decode a raster file (PNG/BMP/TIFF) into a GrayImage.

    Color inputs are converted with ITU luma weights; dpi metadata is kept
    when the file carries it.
    """
    try:
        with Image.open(path) as im:
            im.load()
            dpi_info = im.info.get("dpi")
            if im.mode != "L":
                im = im.convert("L")
            px = np.asarray(im, dtype=np.uint8)
    except (FileNotFoundError, UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise UnreadableImageError(f"cannot decode {path!r}: {exc}") from exc
    if px.size == 0:
        raise EmptyImageError(f"{path!r} has zero area")
    dpi = None
    if dpi_info:
        dpi = int(round(float(dpi_info[0])))
    return GrayImage(px, dpi=dpi)


def otsu_threshold(img: GrayImage) -> int:
    """Otsu cut value t: ink is every pixel with intensity < t."""
    hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist)
    mu = np.cumsum(hist * np.arange(256))
    mu_t = mu[-1]
    # between-class variance for a split after bin t (classes [0..t], [t+1..255])
    w0 = omega[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    sigma_b = np.zeros(255)
    sigma_b[valid] = (mu_t * w0[valid] - mu[:-1][valid]) ** 2 / (w0[valid] * w1[valid])
    if not valid.any():
        return 0  # constant image: no split exists
    return int(np.argmax(sigma_b)) + 1


def binarize(img: GrayImage) -> BinaryImage:
    """Global-Otsu ink mask; raises EmptyInkError when nothing is below the cut."""
    t = otsu_threshold(img)
    ink = img.pixels < t
    if not ink.any():
        raise EmptyInkError("no pixel below the Otsu threshold")
    return BinaryImage(ink)


def crop_bbox(img: BinaryImage) -> tuple[BinaryImage, tuple[int, int, int, int]]:
    """Tight crop around the ink; returns (cropped, (x, y, w, h))."""
    if img.ink_count == 0:
        raise EmptyInkError("cannot crop an empty mask")
    rows = np.flatnonzero(img.ink.any(axis=1))
    cols = np.flatnonzero(img.ink.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    cropped = BinaryImage(img.ink[y0 : y1 + 1, x0 : x1 + 1].copy())
    return cropped, (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def _zhang_suen_pass(ink: np.ndarray, second: bool) -> np.ndarray:
    """One sub-iteration; returns the mask of pixels to delete."""
    p = np.pad(ink, 1)
    # clockwise neighbors starting north: P2..P9
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]
    ring = [p2, p3, p4, p5, p6, p7, p8, p9]
    b = sum(n.astype(np.uint8) for n in ring)
    a = sum(
        ((~ring[i]) & ring[(i + 1) % 8]).astype(np.uint8) for i in range(8)
    )
    if not second:
        c1 = ~(p2 & p4 & p6)
        c2 = ~(p4 & p6 & p8)
    else:
        c1 = ~(p2 & p4 & p8)
        c2 = ~(p2 & p6 & p8)
    return ink & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2


def thin(img: BinaryImage) -> BinaryImage:
    """Zhang-Suen iterative thinning to a 1-pixel-wide 8-connected skeleton."""
    ink = img.ink.copy()
    while True:
        d1 = _zhang_suen_pass(ink, second=False)
        ink[d1] = False
        d2 = _zhang_suen_pass(ink, second=True)
        ink[d2] = False
        if not (d1.any() or d2.any()):
            break
    return BinaryImage(ink)


def connected_components(img: BinaryImage) -> tuple[int, np.ndarray]:
    """8-connected component count and per-pixel labels (0 = background)."""
    labels, count = ndimage.label(img.ink, structure=_EIGHT_CONN)
    return int(count), labels


@dataclass(frozen=True)
class SignatureRecord:
    """One signature with its derived binary / cropped / thinned forms."""

    gray: GrayImage
    binary: BinaryImage  # tight ink crop
    gray_crop: GrayImage  # gray pixels inside the ink bounding box
    skeleton: BinaryImage  # thinned binary crop
    bbox: tuple[int, int, int, int]  # (x, y, w, h) in source coordinates
    path: str | None = None
    writer_id: str | None = None
    genuine: bool | None = None


def preprocess(source, path: str | None = None, writer_id: str | None = None,
               genuine: bool | None = None) -> SignatureRecord:
    """Build a SignatureRecord from a file path or an in-memory GrayImage."""
    if isinstance(source, GrayImage):
        gray = source
    else:
        path = str(source) if path is None else path
        gray = load_signature(source)
    mask = binarize(gray)
    cropped, bbox = crop_bbox(mask)
    x, y, w, h = bbox
    gray_crop = GrayImage(gray.pixels[y : y + h, x : x + w].copy(), dpi=gray.dpi)
    skeleton = thin(cropped)
    return SignatureRecord(
        gray=gray,
        binary=cropped,
        gray_crop=gray_crop,
        skeleton=skeleton,
        bbox=bbox,
        path=path,
        writer_id=writer_id,
        genuine=genuine,
    )
