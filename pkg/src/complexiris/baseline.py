"""Classical IrisCode baseline: phase-quadrant Gabor encoding and masked,
shift-compensated fractional Hamming distance."""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .layers import GaborParams, gabor_kernel

CODE_ROWS = 8
CODE_COLS = 128
# responses below this magnitude count as degenerate
RESPONSE_FLOOR = 1e-6
_SNAP = 1e-12
MAGIC = b"ICOD"
VERSION = 1


class CodeError(ValueError):
    pass


@dataclass
class IrisCode:
    bits: np.ndarray  # rows x cols x filters x 2, bool
    mask: np.ndarray  # rows x cols x filters, bool
    degenerate: bool = False

    def __post_init__(self):
        self.bits = np.asarray(self.bits, bool)
        self.mask = np.asarray(self.mask, bool)
        if self.bits.ndim != 4 or self.bits.shape[-1] != 2 or self.bits.shape[:3] != self.mask.shape:
            raise CodeError(f"code bits {self.bits.shape} do not match mask {self.mask.shape}")

    @property
    def shape(self):
        return self.mask.shape

    @property
    def nbits(self):
        return self.bits.size


def default_bank(wavelengths=(8.0, 16.0), orientations=2, delta_ratio=0.5):
    """lambda x theta grid with psi = 0; delta scales with lambda."""
    thetas = [np.pi * k / orientations for k in range(orientations)]
    return [GaborParams(lam=lam, theta=th, psi=0.0, delta=delta_ratio * lam, gamma=1.0)
            for lam in wavelengths for th in thetas]


def _kernel_for(p: GaborParams, max_h: int = 63, max_w: int = 127):
    half = int(np.ceil(2 * p.delta))
    kh = min(2 * int(np.ceil(2 * p.delta / p.gamma)) + 1, max_h)
    kw = min(2 * half + 1, max_w)
    k = gabor_kernel(p, kh, kw).to_complex()
    # remove the DC response so flat regions give (near) zero output
    k = k - k.real.mean()
    return k / np.linalg.norm(k)


def _filter_strip(strip, kernel):
    """Same-size correlation; edge-replicated rows, wrapped columns."""
    kh, kw = kernel.shape
    ph = kh // 2
    padded = np.pad(strip, ((ph, ph), (0, 0)), mode="edge")
    H, W = padded.shape
    if kw > W:
        raise CodeError("kernel wider than the strip")
    # circular convolution with q[m] = k[-m] realises the correlation
    # output[r, c] = sum k[i, j] x[r + i - kh//2, c + j - kw//2]
    ii, jj = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    kpad = np.zeros((H, W), complex)
    kpad[(-ii) % H, (-(jj - kw // 2)) % W] = kernel
    out = np.fft.ifft2(np.fft.fft2(padded) * np.fft.fft2(kpad))
    return out[:strip.shape[0]]


def _box_mean(mask, kh, kw):
    m = np.pad(mask.astype(np.float64), ((kh // 2, kh // 2), (0, 0)), mode="edge")
    c = np.cumsum(np.pad(m, ((1, 0), (0, 0))), axis=0)
    rows = (c[kh:] - c[:-kh]) / kh
    # circular box along columns
    wrapped = np.concatenate([rows[:, -(kw // 2):] if kw > 1 else rows[:, :0], rows,
                              rows[:, :kw // 2]], axis=1)
    c = np.cumsum(np.pad(wrapped, ((0, 0), (1, 0))), axis=1)
    return (c[:, kw:] - c[:, :-kw]) / kw


def sample_grid(h, w, rows, cols):
    r = ((np.arange(rows) + 0.5) * h / rows).astype(int)
    c = (np.arange(cols) * w // cols).astype(int)
    return r, c


def encode(strip, mask=None, bank=None, rows: int = CODE_ROWS, cols: int = CODE_COLS,
           floor: float | None = None) -> IrisCode:
    """Phase-quadrant code from a normalised strip.

    Bits are (Re >= 0, Im >= 0) of each filter response sampled on a
    rows x cols grid. A cell is valid when most of the kernel footprint is
    valid in the strip mask; ``floor`` additionally masks cells whose
    response magnitude is below it.
    """
    strip = np.asarray(strip, np.float64)
    h, w = strip.shape
    if not (1 <= rows <= h and 1 <= cols <= w):
        raise CodeError(f"code grid {rows}x{cols} does not fit a {h}x{w} strip")
    bank = default_bank() if bank is None else list(bank)
    if not bank:
        raise CodeError("empty Gabor bank")
    mask = np.ones_like(strip, bool) if mask is None else np.asarray(mask, bool)
    r_idx, c_idx = sample_grid(h, w, rows, cols)
    bits = np.zeros((rows, cols, len(bank), 2), bool)
    cmask = np.zeros((rows, cols, len(bank)), bool)
    peak = 0.0
    for f, p in enumerate(bank):
        k = _kernel_for(p)
        resp = _filter_strip(strip, k)[np.ix_(r_idx, c_idx)]
        # round-off around an exact zero response must not flip the bit
        bits[..., f, 0] = np.where(np.abs(resp.real) < _SNAP, 0.0, resp.real) >= 0
        bits[..., f, 1] = np.where(np.abs(resp.imag) < _SNAP, 0.0, resp.imag) >= 0
        valid = _box_mean(mask, *k.shape)[np.ix_(r_idx, c_idx)] > 0.5
        if floor is not None:
            valid &= np.abs(resp) >= floor
        cmask[..., f] = valid
        peak = max(peak, float(np.abs(resp).max()))
    return IrisCode(bits, cmask, degenerate=peak < RESPONSE_FLOOR)


def hamming(a: IrisCode, b: IrisCode, max_shift: int = 4):
    """Minimum fractional Hamming distance over circular column shifts of a.

    Returns (distance, shift). Ties keep the smallest |shift|, negative first.
    """
    if a.shape != b.shape:
        raise CodeError(f"code shapes differ: {a.shape} vs {b.shape}")
    best, best_b = None, 0
    for s in _shift_order(max_shift):
        ab = np.roll(a.bits, s, 1)
        am = np.roll(a.mask, s, 1)
        joint = (am & b.mask)[..., None]
        n = 2 * int(joint.sum())
        if n == 0:
            continue
        d = int(((ab ^ b.bits) & joint).sum()) / n
        if best is None or d < best:
            best, best_b = d, s
    if best is None:
        raise CodeError("no jointly valid bits between the two codes")
    return best, best_b


def _shift_order(B):
    order = [0]
    for k in range(1, B + 1):
        order += [-k, k]
    return order


def pairwise_hamming(codes, max_shift: int = 4) -> np.ndarray:
    """N x N matrix of shift-compensated distances via bit-count matmuls."""
    bits = np.stack([c.bits for c in codes]).astype(np.float32)
    masks = np.stack([np.repeat(c.mask[..., None], 2, -1) for c in codes]).astype(np.float32)
    n = len(codes)
    best = np.full((n, n), np.inf)
    flat = lambda x: x.reshape(n, -1)
    mb = flat(masks * bits)
    m = flat(masks)
    for s in _shift_order(max_shift):
        bs = np.roll(bits, s, 2)
        ms = np.roll(masks, s, 2)
        msb = flat(ms * bs)
        mss = flat(ms)
        joint = (mss @ m.T).astype(np.float64)
        # popcount(x xor y) within joint mask = sum m(x + y - 2xy)
        diff = (msb @ m.T + mss @ mb.T - 2 * (msb @ mb.T)).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(joint > 0, diff / np.maximum(joint, 1), np.inf)
        best = np.minimum(best, d)
    return best


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def code_bytes(code: IrisCode) -> bytes:
    r, c, f = code.shape
    head = MAGIC + struct.pack("<IIIIB", VERSION, r, c, f, int(code.degenerate))
    return head + np.packbits(code.bits.ravel()).tobytes() + np.packbits(code.mask.ravel()).tobytes()


def parse_code(data: bytes) -> IrisCode:
    if data[:4] != MAGIC:
        raise CodeError("not an ICOD file")
    hs = 4 + struct.calcsize("<IIIIB")
    if len(data) < hs:
        raise CodeError("truncated ICOD header")
    ver, r, c, f, degen = struct.unpack("<IIIIB", data[4:hs])
    if ver != VERSION:
        raise CodeError(f"unsupported ICOD version {ver}")
    nb = r * c * f * 2
    nm = r * c * f
    lb, lm = (nb + 7) // 8, (nm + 7) // 8
    if len(data) != hs + lb + lm:
        raise CodeError("ICOD payload size does not match its dimensions")
    bits = np.unpackbits(np.frombuffer(data[hs:hs + lb], np.uint8))[:nb].reshape(r, c, f, 2)
    mask = np.unpackbits(np.frombuffer(data[hs + lb:], np.uint8))[:nm].reshape(r, c, f)
    return IrisCode(bits.astype(bool), mask.astype(bool), bool(degen))


def save_code(code: IrisCode, path):
    with open(path, "wb") as fh:
        fh.write(code_bytes(code))


def load_code(path) -> IrisCode:
    with open(path, "rb") as fh:
        return parse_code(fh.read())


# ---------------------------------------------------------------------------
# parameter search
# ---------------------------------------------------------------------------

def d_prime(genuine, impostor) -> float:
    g = np.asarray(genuine, float)
    i = np.asarray(impostor, float)
    pooled = np.sqrt((g.var() + i.var()) / 2)
    if pooled == 0:
        return np.inf if i.mean() != g.mean() else 0.0
    return float((i.mean() - g.mean()) / pooled)


def grid_search(strips, masks, labels, wavelengths=(4.0, 6.0, 8.0, 12.0, 16.0),
                delta_ratios=(0.35, 0.5, 0.7), orientations=2, rows=CODE_ROWS,
                cols=CODE_COLS, max_shift=4):
    """Pick (lambda pair, delta ratio) maximising genuine/impostor d-prime.

    Each candidate bank uses two consecutive wavelengths from ``wavelengths``.
    Returns (best, table) where table rows are (lam1, lam2, ratio, d').
    """
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(len(labels), 1)
    table = []
    for (l1, l2), ratio in itertools.product(zip(wavelengths[:-1], wavelengths[1:]), delta_ratios):
        bank = default_bank((l1, l2), orientations, ratio)
        codes = [encode(s, m, bank, rows, cols) for s, m in zip(strips, masks)]
        d = pairwise_hamming(codes, max_shift)
        dp = d_prime(d[iu][same[iu]], d[iu][~same[iu]])
        table.append((l1, l2, ratio, dp))
    best = max(table, key=lambda t: t[3])
    return best, table
