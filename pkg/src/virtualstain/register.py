"""Cross-modality alignment of phase images to their stained colour counterparts.

Four steps: edge-based field-of-view matching, a global similarity
transform found by correlation, a rough staining network that renders the
phase in colour, and block-matching elastic registration of that rendering
against the colour image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage, optimize

from .color import luminance


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix mapping output (row, col) coordinates to input coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        if abs(np.linalg.det(m[:, :2])) <= 1e-6:
            raise ValueError("affine linear part is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0, 0], [0, 1.0, 0]]))

    @classmethod
    def similarity(cls, theta_deg=0.0, scale=1.0, ty=0.0, tx=0.0, center=(0.0, 0.0)):
        """Rotation by ``theta_deg`` and scaling about ``center``, then translation.

        The transform moves image content: a feature at p in the input
        appears at center + s R (p - center) + (ty, tx) in the output.
        The stored matrix is the inverse (output -> input) mapping.
        """
        th = np.deg2rad(theta_deg)
        # content rotates counter-clockwise on screen (row axis points down)
        fwd = scale * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        inv = np.linalg.inv(fwd)
        c = np.asarray(center, dtype=float)
        offset = c - inv @ (c + np.array([ty, tx]))
        return cls(np.column_stack([inv, offset]))

    def inverse(self):
        a = self.matrix[:, :2]
        inv = np.linalg.inv(a)
        return AffineTransform(np.column_stack([inv, -inv @ self.matrix[:, 2]]))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Mapping equivalent to warping with ``other`` and then with ``self``."""
        a1, t1 = self.matrix[:, :2], self.matrix[:, 2]
        a2, t2 = other.matrix[:, :2], other.matrix[:, 2]
        return AffineTransform(np.column_stack([a2 @ a1, a2 @ t1 + t2]))

    def map_coords(self, rows, cols):
        m = self.matrix
        return m[0, 0] * rows + m[0, 1] * cols + m[0, 2], m[1, 0] * rows + m[1, 1] * cols + m[1, 2]

    def params(self, center=(0.0, 0.0)):
        """(theta_deg, scale, ty, tx) of the content motion, for similarity transforms."""
        fwd = np.linalg.inv(self.matrix[:, :2])
        scale = float(np.sqrt(abs(np.linalg.det(fwd))))
        theta = float(np.rad2deg(np.arctan2(fwd[1, 0], fwd[0, 0])))
        c = np.asarray(center, dtype=float)
        # output position of the centre
        moved = fwd @ (c - self.matrix[:, 2])
        ty, tx = moved - c
        return theta, scale, float(ty), float(tx)


@dataclass
class DisplacementField:
    """Per-pixel displacement (dy, dx): output pixel p samples the input at p + d."""

    dy: np.ndarray
    dx: np.ndarray
    max_displacement: float = 20.0
    block_dy: np.ndarray | None = None
    block_dx: np.ndarray | None = None
    block_centers: tuple | None = None

    def __post_init__(self):
        if self.dy.shape != self.dx.shape:
            raise ValueError("dy and dx must have the same shape")
        if not (np.all(np.isfinite(self.dy)) and np.all(np.isfinite(self.dx))):
            raise ValueError("displacement field is not finite")
        if np.max(np.hypot(self.dy, self.dx)) > self.max_displacement + 1e-9:
            raise ValueError(f"displacement exceeds the {self.max_displacement} px bound")

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))


# -- step 1: edges and field-of-view matching --------------------------------

def canny_edges(image, low_pct: float = 70.0, high_pct: float = 90.0, sigma: float = 1.4) -> np.ndarray:
    """Canny edge mask with hysteresis thresholds at gradient-magnitude percentiles.

    Percentiles are taken over the non-zero gradient magnitudes, so a flat
    image yields no edges.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or min(image.shape) < 16:
        raise ValueError("canny_edges needs a 2-D image of at least 16x16")
    if not 0 <= low_pct < high_pct <= 100:
        raise ValueError(f"need 0 <= low_pct < high_pct <= 100, got {low_pct}, {high_pct}")
    smooth = ndimage.gaussian_filter(image - image.mean(), sigma, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    scale = mag.max()
    if scale <= 1e-12 * max(1.0, np.abs(image).max()):
        return np.zeros(image.shape, dtype=bool)

    # non-maximum suppression along the quantized gradient direction
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = (np.round(angle / 45.0).astype(int)) % 4
    padded = np.pad(mag, 1)
    h, w = mag.shape
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in steps.items():
        ahead = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        behind = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (sector == s) & (mag >= ahead) & (mag > behind)
    suppressed = np.where(keep, mag, 0.0)
    suppressed[mag < 1e-9 * scale] = 0.0

    nonzero = mag[mag > 1e-9 * scale]
    low, high = np.percentile(nonzero, [low_pct, high_pct])
    strong = suppressed >= high
    weak = suppressed >= low
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(image.shape, dtype=bool)
    connected = np.zeros(n + 1, dtype=bool)
    connected[np.unique(labels[strong])] = True
    connected[0] = False
    return connected[labels]


@dataclass
class FovMatch:
    row: int
    col: int
    score: float


def match_fov(small_edges, large_edges) -> FovMatch:
    """Locate ``small_edges`` inside ``large_edges`` by FFT cross-correlation.

    The score is the correlation at the best offset normalized by the edge
    energy of both windows (1.0 for an exact match).
    """
    a = np.asarray(small_edges, dtype=float)
    b = np.asarray(large_edges, dtype=float)
    if a.shape[0] > b.shape[0] or a.shape[1] > b.shape[1]:
        raise ValueError("large edge image must be at least as big as the small one")
    if not a.any() or not b.any():
        raise ValueError("edge masks are empty; correlation score undefined")
    H, W = b.shape
    h, w = a.shape
    fa = np.fft.rfft2(a, s=(H, W))
    fb = np.fft.rfft2(b)
    corr = np.fft.irfft2(fb * np.conj(fa), s=(H, W))[:H - h + 1, :W - w + 1]
    # energy of each candidate window of b (sum of squares via integral image)
    sq = np.pad(np.cumsum(np.cumsum(b**2, 0), 1), ((1, 0), (1, 0)))
    window = sq[h:, w:] - sq[:-h, w:] - sq[h:, :-w] + sq[:-h, :-w]
    norm = np.sqrt(np.maximum(window, 0) * np.sum(a**2))
    score = np.where(norm > 0, corr / np.where(norm > 0, norm, 1.0), 0.0)
    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
    return FovMatch(int(r), int(c), float(np.clip(score[r, c], -1.0, 1.0)))


# -- step 2: global similarity transform -------------------------------------

def warp_affine(image, transform: AffineTransform, order=1, cval=np.nan, output_shape=None):
    """Resample ``image`` (H, W[, C]) through ``transform``; out-of-bounds samples get ``cval``.

    ``output_shape`` (rows, cols) defaults to the input's spatial shape.
    """
    image = np.asarray(image, dtype=float)
    m = transform.matrix
    shape = tuple(output_shape) if output_shape is not None else image.shape[:2]
    if image.ndim == 2:
        return ndimage.affine_transform(image, m[:, :2], offset=m[:, 2], output_shape=shape,
                                        order=order, mode="constant", cval=cval)
    return np.stack([warp_affine(image[..., k], transform, order, cval, shape)
                     for k in range(image.shape[-1])], axis=-1)


def ncc(a, b, mask=None) -> float:
    """Normalized cross-correlation over ``mask`` (finite pixels of both by default)."""
    valid = np.isfinite(a) & np.isfinite(b)
    if mask is not None:
        valid &= mask
    if valid.sum() < 16:
        return -1.0
    x = a[valid] - a[valid].mean()
    y = b[valid] - b[valid].mean()
    denom = np.sqrt(np.sum(x * x) * np.sum(y * y))
    return float(np.sum(x * y) / denom) if denom > 0 else -1.0


def _pyramid(image, levels):
    out = [image]
    for _ in range(levels - 1):
        out.append(ndimage.zoom(ndimage.gaussian_filter(out[-1], 1.0), 0.5, order=1))
    return out[::-1]


@dataclass
class AffineResult:
    transform: AffineTransform
    theta: float
    scale: float
    ty: float
    tx: float
    score: float
    identity_score: float


def affine_register(moving, fixed, levels: int = 3, margin_frac: float = 0.1,
                    search_shift: float = 12.0, search_angle: float = 5.0) -> AffineResult:
    """Similarity transform that, applied to ``moving``, best matches ``fixed`` by NCC.

    Rotation, isotropic scale and translation are refined coarse-to-fine
    over a 3-level pyramid (Powell local search at each level, seeded by a
    coarse grid at the top level). Correlation is evaluated inside a central
    window so borders introduced by the warp do not bias the score.

    Returns:
        AffineResult with the output->input transform for ``warp_affine(moving, ...)``.
    """
    moving = np.asarray(moving, dtype=float)
    fixed = np.asarray(fixed, dtype=float)
    if moving.shape != fixed.shape:
        raise ValueError(f"shapes differ: {moving.shape} vs {fixed.shape}")
    if moving.std() == 0 or fixed.std() == 0:
        raise ValueError("cannot register a flat image")
    mov_pyr = _pyramid(moving, levels)
    fix_pyr = _pyramid(fixed, levels)

    def objective(p, level):
        theta, log_s, ty, tx = p
        mov, fix = mov_pyr[level], fix_pyr[level]
        f = 2.0 ** (levels - 1 - level)
        h, w = fix.shape
        center = ((h - 1) / 2, (w - 1) / 2)
        t = AffineTransform.similarity(theta, np.exp(log_s), ty / f, tx / f, center)
        warped = warp_affine(mov, t, order=1)
        m = int(round(margin_frac * min(h, w)))
        mask = np.zeros_like(fix, dtype=bool)
        mask[m:h - m, m:w - m] = True
        return -ncc(warped, fix, mask)

    # coarse exhaustive seed at the top level
    best = np.zeros(4)
    best_val = objective(best, 0)
    step = 2.0 ** (levels - 1)
    for theta in np.linspace(-search_angle, search_angle, 5):
        for ty in np.arange(-search_shift, search_shift + 1e-9, step):
            for tx in np.arange(-search_shift, search_shift + 1e-9, step):
                p = np.array([theta, 0.0, ty, tx])
                val = objective(p, 0)
                if val < best_val - 1e-12:
                    best, best_val = p, val
    for level in range(levels):
        res = optimize.minimize(objective, best, args=(level,), method="Powell",
                                options={"xtol": 1e-4, "ftol": 1e-9, "maxfev": 4000})
        if res.fun <= objective(best, level):
            best = res.x
    identity_score = -objective(np.zeros(4), levels - 1)
    score = -objective(best, levels - 1)
    h, w = fixed.shape
    center = ((h - 1) / 2, (w - 1) / 2)
    if score <= identity_score:
        best, score = np.zeros(4), identity_score
    theta, log_s, ty, tx = best
    transform = AffineTransform.similarity(theta, np.exp(log_s), ty, tx, center)
    return AffineResult(transform, float(theta), float(np.exp(log_s)), float(ty), float(tx),
                        float(score), float(identity_score))


# -- step 4: elastic block matching -----------------------------------------

def _block_starts(size, block):
    step = block // 2
    starts = list(range(0, size - block + 1, step))
    if starts[-1] != size - block:
        starts.append(size - block)
    return starts


def _best_integer_shift(patch_ref, region, radius):
    """Integer (dy, dx) maximizing NCC of ``patch_ref`` against windows of ``region``."""
    windows = sliding_window_view(region, patch_ref.shape)
    ref = patch_ref - patch_ref.mean()
    ref_norm = np.sqrt(np.sum(ref**2))
    if ref_norm == 0:
        return 0, 0, 0.0
    wm = windows.mean(axis=(-2, -1), keepdims=True)
    wc = windows - wm
    num = np.einsum("ijkl,kl->ij", wc, ref)
    den = np.sqrt(np.einsum("ijkl,ijkl->ij", wc, wc)) * ref_norm
    score = np.where(den > 0, num / np.where(den > 0, den, 1.0), -1.0)
    # prefer the smallest displacement among ties
    size = 2 * radius + 1
    yy, xx = np.mgrid[:size, :size] - radius
    order = np.lexsort((np.hypot(yy, xx).ravel(), -score.ravel()))
    k = order[0]
    return int(yy.ravel()[k]), int(xx.ravel()[k]), float(score.ravel()[k])


def elastic_register(rendered, target, block: int = 32, radius: int = 10,
                     max_displacement: float = 20.0, subpixel: bool = True) -> DisplacementField:
    """Local displacement field aligning ``target`` to ``rendered``.

    Images are split into blocks with 50% overlap; each block of
    ``rendered`` is matched to ``target`` by normalized cross-correlation of
    luminance over integer shifts within ``radius`` (refined by a parabolic
    fit). Block displacements are smoothed with a Gaussian of sigma
    block/4 pixels and interpolated bilinearly to every pixel.

    Returns:
        DisplacementField d such that ``warp(target, d)`` lines up with ``rendered``.
    """
    ref = np.asarray(rendered, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if ref.shape != tgt.shape:
        raise ValueError(f"shapes differ: {ref.shape} vs {tgt.shape}")
    if ref.ndim == 3:
        ref, tgt = luminance(ref), luminance(tgt)
    h, w = ref.shape
    if block < 16:
        raise ValueError("block must be >= 16")
    if block > min(h, w):
        raise ValueError(f"block {block} larger than image {h}x{w}")
    ref_f = np.nan_to_num(ref, nan=np.nanmean(ref))
    tgt_f = np.nan_to_num(tgt, nan=np.nanmean(tgt))
    pad = np.pad(tgt_f, radius, mode="reflect")
    rows, cols = _block_starts(h, block), _block_starts(w, block)
    bdy = np.zeros((len(rows), len(cols)))
    bdx = np.zeros((len(rows), len(cols)))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            region = pad[r:r + block + 2 * radius, c:c + block + 2 * radius]
            patch = ref_f[r:r + block, c:c + block]
            dy, dx, _ = _best_integer_shift(patch, region, radius)
            if subpixel:
                dy, dx = _refine(patch, region, radius, dy, dx)
            bdy[i, j], bdx[i, j] = dy, dx
    sigma_blocks = (block / 4.0) / (block / 2.0)
    bdy_s = ndimage.gaussian_filter(bdy, sigma_blocks, mode="nearest")
    bdx_s = ndimage.gaussian_filter(bdx, sigma_blocks, mode="nearest")
    centers_r = np.array(rows) + (block - 1) / 2.0
    centers_c = np.array(cols) + (block - 1) / 2.0
    dy_full = _bilinear_grid(bdy_s, centers_r, centers_c, h, w)
    dx_full = _bilinear_grid(bdx_s, centers_r, centers_c, h, w)
    mag = np.hypot(dy_full, dx_full)
    over = mag > max_displacement
    if np.any(over):
        scale = np.where(over, max_displacement / np.maximum(mag, 1e-12), 1.0)
        dy_full, dx_full = dy_full * scale, dx_full * scale
    return DisplacementField(dy_full, dx_full, max_displacement, bdy_s, bdx_s, (centers_r, centers_c))


def _refine(patch, region, radius, dy, dx):
    """Parabolic sub-pixel refinement of an integer NCC peak."""
    b = patch.shape[0]
    ref = patch - patch.mean()

    def score(oy, ox):
        y0, x0 = radius + oy, radius + ox
        if y0 < 0 or x0 < 0 or y0 + b > region.shape[0] or x0 + b > region.shape[1]:
            return None
        win = region[y0:y0 + b, x0:x0 + patch.shape[1]]
        wc = win - win.mean()
        den = np.sqrt(np.sum(wc**2) * np.sum(ref**2))
        return float(np.sum(wc * ref) / den) if den > 0 else None

    c = score(dy, dx)
    out = [float(dy), float(dx)]
    if c is not None and c >= 1.0 - 1e-12:
        return out[0], out[1]
    for axis, (a, bb) in enumerate([((dy - 1, dx), (dy + 1, dx)), ((dy, dx - 1), (dy, dx + 1))]):
        lo, hi = score(*a), score(*bb)
        if c is None or lo is None or hi is None:
            continue
        denom = lo - 2 * c + hi
        if denom < 0:
            out[axis] += float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))
    return out[0], out[1]


def _bilinear_grid(values, centers_r, centers_c, h, w):
    """Bilinear interpolation of block values at every pixel (clamped outside the centres)."""
    rr = np.interp(np.arange(h), centers_r, np.arange(len(centers_r)))
    cc = np.interp(np.arange(w), centers_c, np.arange(len(centers_c)))
    grid_r, grid_c = np.meshgrid(rr, cc, indexing="ij")
    return ndimage.map_coordinates(values, [grid_r, grid_c], order=1, mode="nearest")


# -- resampling ---------------------------------------------------------------

def warp(image, transform, order=1, cval=np.nan):
    """Bilinear resampling through an AffineTransform or a DisplacementField.

    Out-of-bounds samples are NaN by default; ``valid_mask`` turns them into
    a boolean mask for patch selection.
    """
    image = np.asarray(image, dtype=float)
    if isinstance(transform, AffineTransform):
        return warp_affine(image, transform, order, cval)
    if isinstance(transform, DisplacementField):
        h, w = image.shape[:2]
        rr, cc = np.mgrid[:h, :w].astype(float)
        coords = [rr + transform.dy, cc + transform.dx]
        if image.ndim == 2:
            return ndimage.map_coordinates(image, coords, order=order, mode="constant", cval=cval)
        return np.stack([ndimage.map_coordinates(image[..., k], coords, order=order, mode="constant",
                                                 cval=cval) for k in range(image.shape[-1])], axis=-1)
    raise TypeError(f"cannot warp with {type(transform).__name__}")


def valid_mask(image) -> np.ndarray:
    image = np.asarray(image)
    finite = np.isfinite(image)
    return finite.all(axis=-1) if image.ndim == 3 else finite


def compose_field_with_affine(field: DisplacementField, transform: AffineTransform):
    """Source coordinates in the affine's input for each output pixel of field-then-affine.

    Output pixel p first samples the affine-warped image at p + d(p), which in
    turn samples the original at A(p + d(p)).
    """
    h, w = field.dy.shape
    rr, cc = np.mgrid[:h, :w].astype(float)
    return transform.map_coords(rr + field.dy, cc + field.dx)


def normalize_minmax(image):
    image = np.asarray(image, dtype=float)
    lo, hi = np.nanmin(image), np.nanmax(image)
    return (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)


def phase_to_uint8(phase):
    """Min-max normalized phase as unsigned 8-bit integers."""
    return np.round(normalize_minmax(phase) * 255).astype(np.uint8)
