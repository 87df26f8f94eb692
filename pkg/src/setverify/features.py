"""The ten per-signature descriptor vectors.

Geometry (polar / Cartesian envelopes and transitions), texture (LBP and
LDP histograms, DCT-reduced), skeleton probing on an equimass grid, and an
aggregated log-polar shape context.  All extractors are deterministic pure
functions; the same record always yields a bitwise-identical bundle.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np
from scipy.fft import dct

from .errors import SetVerifyError, TooFewEdgePointsError
from .imaging import BinaryImage, GrayImage, SignatureRecord

POLAR_WEDGES = 9
POLAR_RINGS = 7
CART_BINS = 64
LBP_DIM = 256
LDP_DIM = 168
POSET_DIM = 1280
SC_DIM_DEFAULT = 60
SC_ANGLE_BINS = 12
SC_RADIUS_BINS = 5

# clockwise 8-neighborhood starting at the top-left corner
_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, 1),
                     (1, 1), (1, 0), (1, -1), (0, -1)]


@dataclass(frozen=True)
class FeatureBundle:
    """The ten fixed-dimension descriptors of one signature."""

    polar_radii: np.ndarray  # 63
    polar_angles: np.ndarray  # 63
    polar_counts: np.ndarray  # 63
    cart_env_h: np.ndarray  # 64
    cart_env_v: np.ndarray  # 64
    cart_transitions: np.ndarray  # 64
    lbp: np.ndarray  # 256
    ldp: np.ndarray  # 168
    poset: np.ndarray  # 1280
    shape_context: np.ndarray  # sc_dim (default 60)

    def __post_init__(self):
        for name, dim in self.dims().items():
            vec = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if vec.ndim != 1 or vec.shape[0] != dim:
                raise SetVerifyError(
                    f"feature {name!r} must have dimension {dim}, got {vec.shape}"
                )
            if not np.isfinite(vec).all():
                raise SetVerifyError(f"feature {name!r} contains non-finite values")
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)

    def dims(self) -> dict[str, int]:
        base = {
            "polar_radii": POLAR_WEDGES * POLAR_RINGS,
            "polar_angles": POLAR_WEDGES * POLAR_RINGS,
            "polar_counts": POLAR_WEDGES * POLAR_RINGS,
            "cart_env_h": CART_BINS,
            "cart_env_v": CART_BINS,
            "cart_transitions": CART_BINS,
            "lbp": LBP_DIM,
            "ldp": LDP_DIM,
            "poset": POSET_DIM,
            "shape_context": len(np.atleast_1d(self.shape_context)),
        }
        return base

    def names(self) -> list[str]:
        return [f.name for f in fields(self)]

    def vectors(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]


FEATURE_NAMES = [f.name for f in fields(FeatureBundle)]


def extract_polar(img: BinaryImage):
    """Per-sector (radius spread, angle spread, ink count) over 7 normalized
    radial rings x 9 angular wedges around the ink centroid.

    Degenerate geometry (all ink at the centroid) yields zero radii/angles.
    """
    ys, xs = np.nonzero(img.ink)
    n_sectors = POLAR_WEDGES * POLAR_RINGS
    cy, cx = ys.mean(), xs.mean()
    dy = ys - cy
    dx = xs - cx
    r = np.hypot(dx, dy)
    rmax = r.max()
    rn = r / rmax if rmax > 0 else r
    theta = np.arctan2(dy, dx)
    wedge = np.clip(
        np.floor((theta + np.pi) / (2 * np.pi / POLAR_WEDGES)).astype(int),
        0, POLAR_WEDGES - 1,
    )
    ring = np.minimum((rn * POLAR_RINGS).astype(int), POLAR_RINGS - 1)
    sector = ring * POLAR_WEDGES + wedge

    counts = np.bincount(sector, minlength=n_sectors).astype(np.float64)
    r_lo = np.full(n_sectors, np.inf)
    r_hi = np.full(n_sectors, -np.inf)
    t_lo = np.full(n_sectors, np.inf)
    t_hi = np.full(n_sectors, -np.inf)
    np.minimum.at(r_lo, sector, rn)
    np.maximum.at(r_hi, sector, rn)
    np.minimum.at(t_lo, sector, theta)
    np.maximum.at(t_hi, sector, theta)
    occupied = counts > 0
    radii = np.where(occupied, r_hi - r_lo, 0.0)
    angles = np.where(occupied, t_hi - t_lo, 0.0)
    return radii, angles, counts


def _resample(profile: np.ndarray, nbins: int) -> np.ndarray:
    n = len(profile)
    profile = profile.astype(np.float64)
    if n == nbins:
        return profile.copy()
    if n > nbins:
        edges = (np.arange(nbins + 1) * n) // nbins
        return np.add.reduceat(profile, edges[:-1]) / np.diff(edges)
    return np.interp(np.linspace(0.0, n - 1, nbins), np.arange(n), profile)


def extract_cartesian(img: BinaryImage):
    """Center-to-envelope profiles (64 bins each axis) and per-cell ink
    transition counts on an 8x8 grid over the bounding box."""
    ink = img.ink
    h, w = ink.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    ydist = np.abs(np.arange(h, dtype=np.float64) - cy)[:, None]
    xdist = np.abs(np.arange(w, dtype=np.float64) - cx)[None, :]
    col_env = np.where(ink, ydist, -np.inf).max(axis=0)
    col_env[~ink.any(axis=0)] = 0.0
    row_env = np.where(ink, xdist, -np.inf).max(axis=1)
    row_env[~ink.any(axis=1)] = 0.0
    env_h = _resample(col_env, CART_BINS)
    env_v = _resample(row_env, CART_BINS)

    grid = 8
    r_edges = (np.arange(grid + 1) * h) // grid
    c_edges = (np.arange(grid + 1) * w) // grid
    transitions = np.zeros(CART_BINS)
    flips = ink[:, 1:] != ink[:, :-1]  # change between columns x and x+1
    for i in range(grid):
        r0, r1 = r_edges[i], r_edges[i + 1]
        for j in range(grid):
            c0, c1 = c_edges[j], c_edges[j + 1]
            if r1 > r0 and c1 > c0 + 1:
                transitions[i * grid + j] = np.count_nonzero(
                    flips[r0:r1, c0 : c1 - 1]
                )
    return env_h, env_v, transitions


def _lbp_codes(px: np.ndarray) -> np.ndarray:
    """8-bit codes (bit k set when neighbor k >= center) for interior pixels."""
    center = px[1:-1, 1:-1]
    code = np.zeros(center.shape, dtype=np.int64)
    for k, (oy, ox) in enumerate(_NEIGHBOR_OFFSETS):
        nb = px[1 + oy : px.shape[0] - 1 + oy, 1 + ox : px.shape[1] - 1 + ox]
        code |= (nb >= center).astype(np.int64) << k
    return code


def _region_origins(size: int, rsize: int) -> list[int]:
    return [0, (size - rsize) // 2, size - rsize]


def _region_histograms(code_map: np.ndarray, h: int, w: int, margin: int) -> list[np.ndarray]:
    """256-bin histograms over the 3x3 half-overlapping region grid.

    code_map holds codes for pixels [margin, h-margin) x [margin, w-margin).
    """
    rh, rw = max(1, h // 2), max(1, w // 2)
    hists = []
    for y0 in _region_origins(h, rh):
        for x0 in _region_origins(w, rw):
            ya = max(y0, margin) - margin
            yb = max(min(y0 + rh, h - margin) - margin, ya)
            xa = max(x0, margin) - margin
            xb = max(min(x0 + rw, w - margin) - margin, xa)
            sub = code_map[ya:yb, xa:xb]
            hists.append(np.bincount(sub.ravel(), minlength=256).astype(np.float64))
    return hists


def extract_lbp(img: GrayImage) -> np.ndarray:
    """Basic 3x3 LBP histograms over nine half-overlapping regions, reduced
    by a type-II DCT to the first 256 coefficients."""
    px = img.pixels.astype(np.int16)
    h, w = px.shape
    if h < 3 or w < 3:
        concat = np.zeros(9 * 256)
    else:
        codes = _lbp_codes(px)
        concat = np.concatenate(_region_histograms(codes, h, w, margin=1))
    return dct(concat, type=2)[:LBP_DIM]


# first-derivative step per direction (0, 45, 90, 135 degrees; rows grow down)
_LDP_DIRECTIONS = [(0, 1), (-1, 1), (-1, 0), (-1, -1)]


def _ldp_codes(px: np.ndarray, direction: tuple[int, int]) -> np.ndarray:
    """Second-order derivative-sign-change codes on the margin-2 interior.

    Bit k is set when the first derivative at the center and at neighbor k
    have strictly opposite signs.
    """
    h, w = px.shape
    dy, dx = direction
    d = np.zeros((h, w), dtype=np.float64)
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    ys2 = slice(max(0, -dy) + dy, h - max(0, dy) + dy or None)
    xs2 = slice(max(0, -dx) + dx, w - max(0, dx) + dx or None)
    d[ys, xs] = px[ys, xs] - px[ys2, xs2]
    dc = d[2:-2, 2:-2]
    code = np.zeros(dc.shape, dtype=np.int64)
    for k, (oy, ox) in enumerate(_NEIGHBOR_OFFSETS):
        dn = d[2 + oy : h - 2 + oy, 2 + ox : w - 2 + ox]
        code |= (dc * dn < 0).astype(np.int64) << k
    return code


def extract_ldp(img: GrayImage) -> np.ndarray:
    """Second-order LDP along 0/45/90/135 degrees, regional histograms as in
    extract_lbp, DCT-reduced to 168 coefficients."""
    px = img.pixels.astype(np.float64)
    h, w = px.shape
    parts = []
    for direction in _LDP_DIRECTIONS:
        if h < 5 or w < 5:
            parts.extend([np.zeros(256)] * 9)
        else:
            codes = _ldp_codes(px, direction)
            parts.extend(_region_histograms(codes, h, w, margin=2))
    return dct(np.concatenate(parts), type=2)[:LDP_DIM]


POSET_GRID_ROWS = 10
POSET_GRID_COLS = 16
POSET_PROBES = 8  # h, v, diag, anti-diag adjacencies + 4 solo corners


def _equimass_edges(mass: np.ndarray, k: int) -> np.ndarray:
    n = len(mass)
    total = mass.sum()
    if total == 0:
        return (np.arange(k + 1) * n) // k
    cum = np.cumsum(mass)
    targets = total * np.arange(1, k) / k
    inner = np.searchsorted(cum, targets, side="left")
    edges = np.concatenate([[0], inner, [n]])
    return np.maximum.accumulate(edges)


def extract_poset(skeleton: BinaryImage) -> np.ndarray:
    """Pixel-transition counts from 2x2 lattice probes, accumulated per cell
    of a 10x16 equimass grid: 8 probes x 160 cells = 1280 bins."""
    s = skeleton.ink
    h, w = s.shape
    out = np.zeros(POSET_DIM)
    if h < 2 or w < 2:
        return out
    a = s[:-1, :-1]
    b = s[:-1, 1:]
    c = s[1:, :-1]
    d = s[1:, 1:]
    probes = [
        (a & b).astype(np.int64) + (c & d),  # horizontal ink pairs
        (a & c).astype(np.int64) + (b & d),  # vertical ink pairs
        (a & d).astype(np.int64),  # main diagonal
        (b & c).astype(np.int64),  # anti-diagonal
        (a & ~b & ~c & ~d).astype(np.int64),  # solo corners
        (b & ~a & ~c & ~d).astype(np.int64),
        (c & ~a & ~b & ~d).astype(np.int64),
        (d & ~a & ~b & ~c).astype(np.int64),
    ]
    r_edges = _equimass_edges(s.sum(axis=1), POSET_GRID_ROWS)
    c_edges = _equimass_edges(s.sum(axis=0), POSET_GRID_COLS)
    row_band = np.searchsorted(r_edges[1:-1], np.arange(h - 1), side="right")
    col_band = np.searchsorted(c_edges[1:-1], np.arange(w - 1), side="right")
    cell = (row_band[:, None] * POSET_GRID_COLS + col_band[None, :]).ravel()
    ncells = POSET_GRID_ROWS * POSET_GRID_COLS
    for p, pm in enumerate(probes):
        out[p * ncells : (p + 1) * ncells] = np.bincount(
            cell, weights=pm.ravel().astype(np.float64), minlength=ncells
        )
    return out


def poset_probe_totals(bins: np.ndarray) -> np.ndarray:
    """Per-probe totals; under a 180-degree rotation of the skeleton the
    adjacency totals are preserved and the two solo-corner pairs swap."""
    ncells = POSET_GRID_ROWS * POSET_GRID_COLS
    return bins.reshape(POSET_PROBES, ncells).sum(axis=1)


POSET_ROTATION_MAP = [0, 1, 2, 3, 7, 6, 5, 4]


def edge_pixels(img: BinaryImage) -> tuple[np.ndarray, np.ndarray]:
    """Ink pixels with at least one background 8-neighbor (row-major order)."""
    pad = np.pad(img.ink, 1, constant_values=False)
    all_nb = np.ones(img.ink.shape, dtype=bool)
    for oy, ox in _NEIGHBOR_OFFSETS:
        all_nb &= pad[1 + oy : pad.shape[0] - 1 + oy, 1 + ox : pad.shape[1] - 1 + ox]
    return np.nonzero(img.ink & ~all_nb)


def extract_shape_context(img: BinaryImage, sc_dim: int = SC_DIM_DEFAULT,
                          n_ref: int = 200) -> np.ndarray:
    """Aggregated 12-angle x 5-log-radius histogram of edge-point geometry,
    radius bins anchored to the mean pairwise distance, normalized to sum 1.

    sc_dim >= 60 zero-pads the 60 raw bins up to the requested length.
    """
    if sc_dim < SC_ANGLE_BINS * SC_RADIUS_BINS:
        raise SetVerifyError(f"sc_dim must be >= 60, got {sc_dim}")
    ys, xs = edge_pixels(img)
    ne = len(ys)
    if ne < 6:
        raise TooFewEdgePointsError(f"need >= 6 edge pixels, found {ne}")
    ref = np.unique(np.round(np.linspace(0, ne - 1, min(n_ref, ne))).astype(int))
    dy = ys[None, :] - ys[ref, None]
    dx = xs[None, :] - xs[ref, None]
    dist = np.hypot(dx, dy)
    self_mask = np.zeros(dist.shape, dtype=bool)
    self_mask[np.arange(len(ref)), ref] = True
    mean_d = dist[~self_mask].mean()
    rho = dist / mean_d
    r_edges = np.geomspace(0.125, 2.0, SC_RADIUS_BINS + 1)
    rbin = np.clip(np.searchsorted(r_edges, rho, side="right") - 1, 0, SC_RADIUS_BINS - 1)
    theta = np.arctan2(dy, dx)
    abin = np.clip(
        np.floor((theta + np.pi) / (2 * np.pi / SC_ANGLE_BINS)).astype(int),
        0, SC_ANGLE_BINS - 1,
    )
    flat = (rbin * SC_ANGLE_BINS + abin)[~self_mask]
    hist = np.bincount(flat, minlength=SC_ANGLE_BINS * SC_RADIUS_BINS).astype(np.float64)
    hist /= hist.sum()
    if sc_dim > len(hist):
        hist = np.concatenate([hist, np.zeros(sc_dim - len(hist))])
    return hist


def extract_all(sig: SignatureRecord, sc_dim: int = SC_DIM_DEFAULT) -> FeatureBundle:
    """All ten descriptors of one preprocessed signature."""
    radii, angles, counts = extract_polar(sig.binary)
    env_h, env_v, transitions = extract_cartesian(sig.binary)
    return FeatureBundle(
        polar_radii=radii,
        polar_angles=angles,
        polar_counts=counts,
        cart_env_h=env_h,
        cart_env_v=env_v,
        cart_transitions=transitions,
        lbp=extract_lbp(sig.gray_crop),
        ldp=extract_ldp(sig.gray_crop),
        poset=extract_poset(sig.skeleton),
        shape_context=extract_shape_context(sig.binary, sc_dim=sc_dim),
    )


def extract_texture(sig: SignatureRecord) -> np.ndarray:
    """LBP + LDP concatenation (424 dims); the per-signature model input."""
    return np.concatenate([extract_lbp(sig.gray_crop), extract_ldp(sig.gray_crop)])


_CACHE_MAGIC = b"SVFB"
_CACHE_VERSION = 1


def save_bundle(path, bundle: FeatureBundle) -> None:
    """Write one signature's bundle as a versioned little-endian record."""
    vecs = bundle.vectors()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", _CACHE_VERSION, len(vecs)))
        for vec in vecs:
            fh.write(struct.pack("<I", len(vec)))
            fh.write(vec.astype("<f8").tobytes())


def load_bundle(path) -> FeatureBundle:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CACHE_MAGIC:
            raise SetVerifyError(f"{path!r} is not a feature cache record")
        version, nvec = struct.unpack("<II", fh.read(8))
        if version != _CACHE_VERSION or nvec != len(FEATURE_NAMES):
            raise SetVerifyError(f"unsupported feature cache layout in {path!r}")
        vecs = []
        for _ in range(nvec):
            (dim,) = struct.unpack("<I", fh.read(4))
            vecs.append(np.frombuffer(fh.read(8 * dim), dtype="<f8"))
    return FeatureBundle(**dict(zip(FEATURE_NAMES, vecs)))
