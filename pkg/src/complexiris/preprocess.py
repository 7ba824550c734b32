"""Iris segmentation with the integro-differential operator and rubber-sheet
normalisation to a 64 x 256 strip."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRIP_H = 64
STRIP_W = 256
BLUR_SIGMA = 1.5
N_ANGLES = 64
# operator responses below this (intensity units per pixel) count as "no edge"
LOW_CONFIDENCE = 1e-3


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float
    score: float = 0.0
    low_confidence: bool = False


@dataclass(frozen=True)
class IrisGeometry:
    pupil: Circle
    limbus: Circle

    def __post_init__(self):
        if not self.limbus.r > self.pupil.r > 0:
            raise ValueError("iris geometry needs limbus radius > pupil radius > 0")


@dataclass
class NormalizedIris:
    strip: np.ndarray  # 64 x 256 in [0, 1]
    mask: np.ndarray   # 64 x 256 bool


def as_float_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample ``img`` at float coordinates; returns (values, inside) with
    ``inside`` False where the point falls outside the pixel grid."""
    h, w = img.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(int), w - 2) if w > 1 else np.zeros_like(xc, int)
    y0 = np.minimum(np.floor(yc).astype(int), h - 2) if h > 1 else np.zeros_like(yc, int)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy, inside


def _gaussian_kernel(sigma):
    half = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-half, half + 1)
    k = np.exp(-t ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def _contour_response(img, cxs, cys, radii, sigma):
    """Blurred radial derivative of the mean circular intensity.

    Returns an array (len(cys), len(cxs), len(radii)).
    """
    ang = np.linspace(0, 2 * np.pi, N_ANGLES, endpoint=False)
    cosa, sina = np.cos(ang), np.sin(ang)
    cy = cys[:, None, None, None]
    cx = cxs[None, :, None, None]
    r = radii[None, None, :, None]
    vals, _ = bilinear(img, cx + r * cosa, cy + r * sina)
    means = vals.mean(-1)
    deriv = np.diff(means, axis=-1)
    k = _gaussian_kernel(sigma)
    pad = len(k) // 2
    padded = np.pad(deriv, ((0, 0), (0, 0), (pad, pad)), mode="edge")
    blurred = np.zeros_like(deriv)
    for i, kv in enumerate(k):
        blurred += kv * padded[..., i:i + deriv.shape[-1]]
    return np.abs(blurred)


def integro_differential_locate(img, r_min: int, r_max: int, center_region=None,
                                coarse_step: int = 2, sigma: float = BLUR_SIGMA) -> Circle:
    """Find the circle maximising the blurred radial derivative of the
    contour integral of image intensity.

    ``center_region`` is ``(x0, x1, y0, y1)``; by default the central half of
    the image. A coarse grid search is followed by a 1-pixel refinement.
    """
    img = as_float_image(img)
    h, w = img.shape
    if not (0 < r_min < r_max) or r_max > min(h, w) / 2:
        raise ValueError(f"degenerate radius range [{r_min}, {r_max}] for a {w}x{h} image")
    if center_region is None:
        center_region = (w // 4, w - w // 4, h // 4, h - h // 4)
    x0, x1, y0, y1 = center_region
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty centre search region")
    # the derivative at index i lies between radii i and i + 1
    radii = np.arange(r_min - 1, r_max + 1, dtype=np.float64)
    cxs = np.arange(x0, x1, coarse_step, dtype=np.float64)
    cys = np.arange(y0, y1, coarse_step, dtype=np.float64)
    resp = _contour_response(img, cxs, cys, radii, sigma)
    iy, ix, ir = np.unravel_index(np.argmax(resp), resp.shape)
    best_cx, best_cy = cxs[ix], cys[iy]
    fine = np.arange(-coarse_step, coarse_step + 1, dtype=np.float64)
    cxs = best_cx + fine
    cys = best_cy + fine
    resp = _contour_response(img, cxs, cys, radii, sigma)
    # keep the search inside the requested radius band
    valid = (radii[:-1] + 0.5 >= r_min) & (radii[:-1] + 0.5 <= r_max)
    resp[..., ~valid] = -1
    iy, ix, ir = np.unravel_index(np.argmax(resp), resp.shape)
    score = float(resp[iy, ix, ir])
    return Circle(float(cxs[ix]), float(cys[iy]), float(radii[ir] + 0.5), score,
                  score < LOW_CONFIDENCE)


def segment(img, pupil_range=None, iris_range=None) -> IrisGeometry:
    """Locate pupil then limbus, assuming both share the pupil centre."""
    img = as_float_image(img)
    h, w = img.shape
    half = min(h, w) // 2
    if pupil_range is None:
        pupil_range = (max(4, half // 10), max(6, half * 2 // 5))
    pupil = integro_differential_locate(img, *pupil_range)
    if iris_range is None:
        iris_range = (int(pupil.r * 1.5) + 2, half - 2)
    cx, cy = int(round(pupil.cx)), int(round(pupil.cy))
    limbus = integro_differential_locate(img, *iris_range,
                                         center_region=(cx, cx + 1, cy, cy + 1), coarse_step=1)
    limbus = Circle(pupil.cx, pupil.cy, limbus.r, limbus.score, limbus.low_confidence)
    return IrisGeometry(pupil, limbus)


def rubber_sheet(img, geom: IrisGeometry, occlusion=None,
                 height: int = STRIP_H, width: int = STRIP_W) -> NormalizedIris:
    """Unwrap the annulus into a height x width pseudo-polar strip.

    Rows run from the pupil boundary (row 0) to the limbus; columns sample
    angles 2 pi j / width measured counter-clockwise in image coordinates
    (x right, y down).
    """
    img = as_float_image(img)
    theta = 2 * np.pi * np.arange(width) / width
    rho = np.linspace(0.0, 1.0, height)[:, None]
    p, l = geom.pupil, geom.limbus
    px = p.cx + p.r * np.cos(theta)
    py = p.cy + p.r * np.sin(theta)
    lx = l.cx + l.r * np.cos(theta)
    ly = l.cy + l.r * np.sin(theta)
    x = (1 - rho) * px + rho * lx
    y = (1 - rho) * py + rho * ly
    strip, inside = bilinear(img, x, y)
    mask = inside.copy()
    if occlusion is not None:
        occ = np.asarray(occlusion, bool)
        if occ.shape != img.shape:
            raise ValueError("occlusion grid must match the image shape")
        xi = np.clip(np.rint(x).astype(int), 0, img.shape[1] - 1)
        yi = np.clip(np.rint(y).astype(int), 0, img.shape[0] - 1)
        mask &= ~occ[yi, xi]
    strip = np.where(inside, np.clip(strip, 0.0, 1.0), 0.0)
    return NormalizedIris(strip, mask)
