"""Complex-valued network operations.

Every op comes in two flavours: a pure function on :class:`ComplexTensor`
values (``complex_conv2d``, ``zrelu``, ...) and a graph op on
:class:`~complexiris.autograd.Node` values (``conv2d``, ``zrelu_node``, ...)
that records the backward pass.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import fft as _fft
from .autograd import Node, Parameter
from .ctensor import ComplexTensor


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ---------------------------------------------------------------------------
# Gabor kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaborParams:
    lam: float          # wavelength of the carrier, pixels
    theta: float = 0.0  # orientation of the stripe normal, radians
    psi: float = 0.0    # phase offset, radians
    delta: float = 2.0  # std of the Gaussian envelope, pixels
    gamma: float = 1.0  # spatial aspect ratio

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"Gabor wavelength must be positive, got {self.lam}")
        if not self.delta > 0:
            raise ValueError(f"Gabor envelope std must be positive, got {self.delta}")
        if not self.gamma > 0:
            raise ValueError(f"Gabor aspect ratio must be positive, got {self.gamma}")


def gabor_kernel(p: GaborParams, kh: int, kw: int, dtype=np.float64) -> ComplexTensor:
    """Sample the complex Gabor function on a centred kh x kw grid.

    x runs along columns and y along rows, both as integer offsets from the
    centre pixel.
    """
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"Gabor kernel extents must be odd, got {kh}x{kw}")
    y, x = np.mgrid[-(kh // 2):kh // 2 + 1, -(kw // 2):kw // 2 + 1].astype(np.float64)
    xr = x * math.cos(p.theta) + y * math.sin(p.theta)
    yr = -x * math.sin(p.theta) + y * math.cos(p.theta)
    env = np.exp(-(xr ** 2 + p.gamma ** 2 * yr ** 2) / (2 * p.delta ** 2))
    phase = 2 * np.pi * xr / p.lam + p.psi
    return ComplexTensor(env * np.cos(phase), env * np.sin(phase), dtype=dtype)


def _default_orientations(r):
    target = 2 * math.sqrt(r)
    divs = [d for d in range(1, min(r, 8) + 1) if r % d == 0]
    return min(divs, key=lambda d: (abs(d - target), -d))


def gabor_grid(m: int, orientations: int | None = None, wavelengths: int | None = None,
               phases: int | None = None, base_wavelength: float = 4.0,
               gamma: float = 0.5) -> list[GaborParams]:
    """Deterministic multi-scale, multi-orientation parameter grid of size m.

    Orientations are spread uniformly over [0, pi), wavelengths double from
    ``base_wavelength``, phases are 0 and pi/2, and the envelope std is
    0.56 lambda. Unspecified factors are chosen so the product equals m.
    """
    if m < 1:
        raise ValueError("Gabor bank needs at least one filter")
    if phases is None:
        phases = 2 if m % 2 == 0 and (orientations or 1) * (wavelengths or 1) * 2 <= m else 1
    if orientations is None and wavelengths is None:
        if m % phases:
            raise ValueError(f"{m} filters cannot be split over {phases} phases")
        orientations = _default_orientations(m // phases)
        wavelengths = m // phases // orientations
    elif orientations is None:
        orientations = m // (phases * wavelengths)
    elif wavelengths is None:
        wavelengths = m // (phases * orientations)
    if orientations * wavelengths * phases != m:
        raise ValueError(f"grid {orientations} orientations x {wavelengths} wavelengths x "
                         f"{phases} phases does not give {m} filters")
    params = []
    for t in range(orientations):
        for w in range(wavelengths):
            for s in range(phases):
                lam = base_wavelength * 2 ** w
                params.append(GaborParams(lam=lam, theta=t * math.pi / orientations,
                                          psi=s * math.pi / 2, delta=0.56 * lam, gamma=gamma))
    return params


def gabor_bank(kh: int, kw: int, m: int, dtype=np.float64, **grid) -> ComplexTensor:
    """kh x kw x 1 x m bank of unit-L2-norm Gabor kernels."""
    params = gabor_grid(m, **grid)
    re = np.empty((kh, kw, 1, m))
    im = np.empty((kh, kw, 1, m))
    for j, p in enumerate(params):
        k = gabor_kernel(p, kh, kw)
        norm = math.sqrt(float(np.sum(k.re ** 2 + k.im ** 2)))
        re[:, :, 0, j] = k.re / norm
        im[:, :, 0, j] = k.im / norm
    return ComplexTensor(re, im, dtype=dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass
class ConvSpec:
    kernel: ComplexTensor  # kH x kW x Cin x Cout
    stride: int | tuple = 1
    padding: int | tuple = 0

    def output_hw(self, h, w):
        kh, kw = self.kernel.shape[:2]
        sh, sw = _pair(self.stride)
        ph, pw = _pair(self.padding)
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def _conv_geometry(xshape, kshape, stride, padding):
    n, h, w, cin = xshape
    kh, kw, kcin, cout = kshape
    if kcin != cin:
        raise ValueError(f"kernel expects {kcin} input channels, input has {cin}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError("stride must be positive and padding non-negative")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1, sh, sw, ph, pw


def _pad(a, ph, pw):
    if ph == 0 and pw == 0:
        return a
    return np.pad(a, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _window(i, j, ho, wo, sh, sw):
    return slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw)


def _mm(a, k):
    """(..., C) @ (C, D) as a single 2-D matmul."""
    lead = a.shape[:-1]
    a2 = np.ascontiguousarray(a).reshape(-1, a.shape[-1])
    return (a2 @ k).reshape(lead + (k.shape[-1],))


def _block_kernel(kr, ki):
    """Real (2Cin, 2Cout) matrices per tap: [[x, y], [-y, x]].

    With X2 = [A | B] stacked on channels, X2 @ K2 gives
    [A x - B y | A y + B x], the real and imaginary output planes.
    """
    top = np.concatenate([kr, ki], axis=-1)
    bottom = np.concatenate([-ki, kr], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _taps(kh, kw, ho, wo, sh, sw):
    for i in range(kh):
        for j in range(kw):
            yield i, j, _window(i, j, ho, wo, sh, sw)


# patch matrices up to this many columns are materialised in full
_IM2COL_MAX = 128


def _im2col_t(X, kh, kw, ho, wo, sh, sw):
    """Transposed patch matrix: (kh*kw*C, N*ho*wo)."""
    n, c = X.shape[0], X.shape[-1]
    P = np.empty((kh, kw, c, n, ho, wo), X.dtype)
    Xc = np.moveaxis(X, -1, 0)
    for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
        P[i, j] = Xc[:, :, rs, cs]
    return P.reshape(kh * kw * c, -1)


def _conv_forward(xr, xi, kr, ki, stride, padding):
    ho, wo, sh, sw, ph, pw = _conv_geometry(xr.shape, kr.shape, stride, padding)
    kh, kw, cin, cout = kr.shape
    X = _pad(np.concatenate([xr, xi], axis=-1), ph, pw)
    K = _block_kernel(kr, ki)
    if kh == kw == 1:
        out = _mm(X[:, ::sh, ::sw][:, :ho, :wo], K[0, 0])
    elif kh * kw * 2 * cin <= _IM2COL_MAX:
        n = X.shape[0]
        P = _im2col_t(X, kh, kw, ho, wo, sh, sw)
        out = (P.T @ K.reshape(-1, 2 * cout)).reshape(n, ho, wo, 2 * cout)
    elif cin <= cout:
        # few input channels: shift the input once per tap
        out = None
        for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
            term = _mm(X[:, rs, cs, :], K[i, j])
            if out is None:
                out = term
            else:
                out += term
    else:
        # few output channels: one matmul for all taps, then shift the outputs
        n, hp, wp = X.shape[:3]
        kall = K.transpose(2, 0, 1, 3).reshape(2 * cin, kh * kw * 2 * cout)
        Z = (X.reshape(-1, 2 * cin) @ kall).reshape(n, hp, wp, kh, kw, 2 * cout)
        out = np.zeros((n, ho, wo, 2 * cout), X.dtype)
        for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
            out += Z[:, rs, cs, i, j, :]
    return out[..., :cout], out[..., cout:]


def _fold_kernel_grad(gk, cin, cout):
    # gradient of the structured [[x, y], [-y, x]] block
    return gk[..., :cin, :cout] + gk[..., cin:, cout:], gk[..., :cin, cout:] - gk[..., cin:, :cout]


def _conv_backward(g, xr, xi, kr, ki, stride, padding, need_input=True):
    """Gradients w.r.t. input and kernel in the real-pair convention.

    The forward map is real-linear in the stacked planes, so the input
    gradient is G2 @ K2^T and the kernel gradient X2^T @ G2 folded back onto
    the [[x, y], [-y, x]] structure. In complex terms these are the
    correlation with conj(kernel) and conj(input) respectively.
    """
    ho, wo, sh, sw, ph, pw = _conv_geometry(xr.shape, kr.shape, stride, padding)
    kh, kw, cin, cout = kr.shape
    X = _pad(np.concatenate([xr, xi], axis=-1), ph, pw)
    K = _block_kernel(kr, ki)
    G = np.concatenate([g.re, g.im], axis=-1)
    n, hp, wp = X.shape[:3]
    gX = None
    if kh == kw == 1 and sh == sw == 1:
        gk = X.reshape(-1, 2 * cin).T @ G.reshape(-1, 2 * cout)
        gkr, gki = _fold_kernel_grad(gk, cin, cout)
        gkr, gki = gkr[None, None], gki[None, None]
        if need_input:
            gX = _mm(G, K[0, 0].T)
    elif kh * kw * 2 * cin <= _IM2COL_MAX:
        P = _im2col_t(X, kh, kw, ho, wo, sh, sw)
        gk = (P @ G.reshape(-1, 2 * cout)).reshape(kh, kw, 2 * cin, 2 * cout)
        gkr, gki = _fold_kernel_grad(gk, cin, cout)
        if need_input:
            gP = _mm(G, K.reshape(-1, 2 * cout).T).reshape(n, ho, wo, kh, kw, 2 * cin)
            gX = np.zeros_like(X)
            for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
                gX[:, rs, cs, :] += gP[:, :, :, i, j, :]
    elif cin <= cout:
        G2 = G.reshape(-1, 2 * cout)
        gkr = np.empty_like(kr)
        gki = np.empty_like(ki)
        if need_input:
            gX = np.zeros_like(X)
        for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
            patch = np.ascontiguousarray(X[:, rs, cs, :]).reshape(-1, 2 * cin)
            gkr[i, j], gki[i, j] = _fold_kernel_grad(patch.T @ G2, cin, cout)
            if need_input:
                gX[:, rs, cs, :] += _mm(G, K[i, j].T)
    else:
        # scatter the output gradient to every tap position in padded coordinates
        S = np.zeros((n, hp, wp, kh, kw, 2 * cout), X.dtype)
        for i, j, (rs, cs) in _taps(kh, kw, ho, wo, sh, sw):
            S[:, rs, cs, i, j, :] = G
        S2 = S.reshape(-1, kh * kw * 2 * cout)
        gk = (X.reshape(-1, 2 * cin).T @ S2).reshape(2 * cin, kh, kw, 2 * cout)
        gkr, gki = _fold_kernel_grad(gk.transpose(1, 2, 0, 3), cin, cout)
        if need_input:
            kall = K.transpose(2, 0, 1, 3).reshape(2 * cin, kh * kw * 2 * cout)
            gX = (S2 @ kall.T).reshape(n, hp, wp, 2 * cin)
    gx = None
    if need_input:
        h, w = xr.shape[1:3]
        inner = gX[:, ph:ph + h, pw:pw + w, :]
        gx = ComplexTensor(inner[..., :cin], inner[..., cin:])
    return gx, ComplexTensor(np.ascontiguousarray(gkr), np.ascontiguousarray(gki))


def _batched(t: ComplexTensor):
    if t.ndim == 3:
        return t.reshape((1,) + t.shape), True
    if t.ndim != 4:
        raise ValueError(f"expected H x W x C or N x H x W x C, got shape {t.shape}")
    return t, False


def complex_conv2d(x: ComplexTensor, spec: ConvSpec) -> ComplexTensor:
    """Complex cross-correlation with stride and zero padding.

    Accepts a single H x W x C map or an N x H x W x C batch.
    """
    xb, single = _batched(x)
    k = spec.kernel.astype(xb.dtype)
    re, im = _conv_forward(xb.re, xb.im, k.re, k.im, spec.stride, spec.padding)
    out = ComplexTensor(re, im)
    return out[0] if single else out


def conv2d(x: Node, w: Node, stride=1, padding=0) -> Node:
    xv, wv = x.value, w.value
    if xv.ndim != 4:
        raise ValueError(f"conv2d graph op expects an N x H x W x C batch, got {xv.shape}")
    kr = wv.re.astype(xv.dtype, copy=False)
    ki = wv.im.astype(xv.dtype, copy=False)
    re, im = _conv_forward(xv.re, xv.im, kr, ki, stride, padding)

    def bw(g):
        gx, gk = _conv_backward(g, xv.re, xv.im, kr, ki, stride, padding,
                                need_input=x.requires_grad)
        return gx, gk.astype(wv.dtype)

    return Node(ComplexTensor(re, im), (x, w), bw, "conv2d")


# ---------------------------------------------------------------------------
# activation
# ---------------------------------------------------------------------------

_MARGIN_PROBES: list = []


@contextlib.contextmanager
def zrelu_margin_probe():
    """Collect min(|Re|, |Im|) over every zReLU input seen inside the block."""
    record = [math.inf]
    _MARGIN_PROBES.append(record)
    try:
        yield record
    finally:
        _MARGIN_PROBES.remove(record)


def _zrelu_mask(re, im):
    # boundary values (arg exactly 0 or pi/2) pass through
    if _MARGIN_PROBES and re.size:
        m = float(np.minimum(np.abs(re), np.abs(im)).min())
        for rec in _MARGIN_PROBES:
            rec[0] = min(rec[0], m)
    return (re >= 0) & (im >= 0)


def zrelu(x: ComplexTensor) -> ComplexTensor:
    """Pass z where arg(z) lies in [0, pi/2], zero elsewhere."""
    mask = _zrelu_mask(x.re, x.im)
    return ComplexTensor(np.where(mask, x.re, 0), np.where(mask, x.im, 0))


def zrelu_node(x: Node) -> Node:
    v = x.value
    mask = _zrelu_mask(v.re, v.im)
    out = ComplexTensor(v.re * mask, v.im * mask)
    return Node(out, (x,), lambda g: (ComplexTensor(g.re * mask, g.im * mask),), "zrelu")


# ---------------------------------------------------------------------------
# spectral pooling
# ---------------------------------------------------------------------------

def _kept_frequencies(n_out, n_in):
    # centred on DC; even sizes keep the extra bin on the negative side
    idx = []
    for j in range(n_out):
        f = j if j <= (n_out - 1) // 2 else j - n_out
        idx.append(f % n_in)
    return np.array(idx)


def _check_pool(h, w, oh, ow):
    if not (1 <= oh <= h and 1 <= ow <= w):
        raise ValueError(f"spectral pooling output {oh}x{ow} must be within 1..{h}x1..{w}")


def _pool_complex(z, oh, ow):
    """z: complex array (N, H, W, C)."""
    h, w = z.shape[1:3]
    _check_pool(h, w, oh, ow)
    F = _fft.fftn(z, (1, 2))
    rows = _kept_frequencies(oh, h)
    cols = _kept_frequencies(ow, w)
    small = F[:, rows][:, :, cols]
    return _fft.ifftn(small, (1, 2)) * ((oh * ow) / (h * w))


def _unpool_complex(z, h, w):
    """Zero-pad the spectrum of z (N, oh, ow, C) back to h x w (adjoint of pooling)."""
    oh, ow = z.shape[1:3]
    S = _fft.fftn(z, (1, 2))
    big = np.zeros((z.shape[0], h, w, z.shape[3]), S.dtype)
    rows = _kept_frequencies(oh, h)
    cols = _kept_frequencies(ow, w)
    big[np.ix_(np.arange(z.shape[0]), rows, cols, np.arange(z.shape[3]))] = S
    return _fft.ifftn(big, (1, 2))


def spectral_pool(x: ComplexTensor, out_h: int, out_w: int) -> ComplexTensor:
    """Keep the centred low-frequency out_h x out_w block of each channel."""
    xb, single = _batched(x)
    out = ComplexTensor.from_complex(_pool_complex(xb.to_complex(), out_h, out_w), dtype=x.dtype)
    return out[0] if single else out


def spectral_upsample(x: ComplexTensor, h: int, w: int) -> ComplexTensor:
    """Zero-pad the spectrum to h x w, preserving constant maps."""
    xb, single = _batched(x)
    oh, ow = xb.shape[1:3]
    z = _unpool_complex(xb.to_complex(), h, w) * ((h * w) / (oh * ow))
    out = ComplexTensor.from_complex(z, dtype=x.dtype)
    return out[0] if single else out


def spectral_pool_node(x: Node, out_h: int, out_w: int, rng=None, jitter_p: float = 0.0) -> Node:
    v = x.value
    h, w = v.shape[1:3]
    if rng is not None and jitter_p > 0 and rng.random() < jitter_p:
        out_h = int(np.clip(out_h + rng.choice([-1, 1]), 1, h))
        out_w = int(np.clip(out_w + rng.choice([-1, 1]), 1, w))
    out = ComplexTensor.from_complex(_pool_complex(v.to_complex(), out_h, out_w), dtype=v.dtype)

    def bw(g):
        # L = s ifft_small . crop . fft_big, so L^H = ifft_big . pad . fft_small
        return (ComplexTensor.from_complex(_unpool_complex(g.to_complex(), h, w), dtype=v.dtype),)

    return Node(out, (x,), bw, "spectral_pool")


# ---------------------------------------------------------------------------
# complex batch normalisation
# ---------------------------------------------------------------------------

@dataclass
class BNState:
    """Per-channel complex BN parameters and running statistics.

    gamma is a symmetric 2x2 real matrix per channel, packed as
    ``gamma_diag`` (re = g_rr, im = g_ii) and ``gamma_off`` (re = g_ri).
    Running covariance is packed the same way.
    """

    channels: int
    gamma_diag: Parameter = None
    gamma_off: Parameter = None
    beta: Parameter = None
    running_mean: ComplexTensor = None
    running_cov_diag: ComplexTensor = None
    running_cov_off: ComplexTensor = None
    momentum: float = 0.9
    eps: float = 1e-5
    real_only: bool = False
    dtype: type = np.float64
    num_batches: int = field(default=0)

    def __post_init__(self):
        c, dt = self.channels, self.dtype
        g0 = 1 / math.sqrt(2)
        if self.gamma_diag is None:
            self.gamma_diag = Parameter(ComplexTensor(np.full(c, g0), np.full(c, g0), dtype=dt),
                                        name="gamma_diag")
        if self.gamma_off is None:
            self.gamma_off = Parameter(ComplexTensor.zeros(c, dt), name="gamma_off", real_only=True)
        if self.real_only:
            self.gamma_off.trainable = False
        if self.beta is None:
            self.beta = Parameter(ComplexTensor.zeros(c, dt), name="beta", real_only=self.real_only)
        if self.running_mean is None:
            self.running_mean = ComplexTensor.zeros(c, dt)
        if self.running_cov_diag is None:
            self.running_cov_diag = ComplexTensor(np.ones(c), np.ones(c), dtype=dt)
        if self.running_cov_off is None:
            self.running_cov_off = ComplexTensor.zeros(c, dt)
        if not (0 < self.momentum < 1):
            raise ValueError("BN momentum must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("BN epsilon must be positive")

    @classmethod
    def identity(cls, channels, dtype=np.float64, **kw):
        """State with gamma = I and beta = 0."""
        st = cls(channels, dtype=dtype, **kw)
        st.gamma_diag.value = ComplexTensor(np.ones(channels), np.ones(channels), dtype=dtype)
        return st

    def parameters(self):
        return [self.gamma_diag, self.gamma_off, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean,
                "running_cov_diag": self.running_cov_diag,
                "running_cov_off": self.running_cov_off}


def _inv_sqrt_2x2(a, b, d):
    """Entries of (V)^(-1/2) for V = [[a, b], [b, d]] (vectorised)."""
    s = np.sqrt(a * d - b * b)
    t = np.sqrt(a + d + 2 * s)
    k = 1.0 / (s * t)
    return (d + s) * k, -b * k, (a + s) * k, (s, t, k)


def _csum(x):
    return np.ones(x.shape[0], x.dtype) @ x


def _cdot(x, y):
    return np.einsum("mc,mc->c", x, y)


def complex_batchnorm(x: ComplexTensor, state: BNState, mode: str = "train") -> ComplexTensor:
    """Whiten each channel with its 2x2 covariance, then apply gamma and beta."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    return batchnorm(Node(x), state, train=(mode == "train")).value


def batchnorm(x: Node, state: BNState, train: bool = True) -> Node:
    v = x.value
    shape = v.shape
    c = shape[-1]
    re = v.re.reshape(-1, c)
    im = v.im.reshape(-1, c)
    m = re.shape[0]
    dt = re.dtype
    eps = state.eps
    if train:
        if m < 2:
            raise ValueError("complex batch norm in train mode needs at least 2 values per channel")
        mr = _csum(re) / m
        mi = _csum(im) / m
        cr = re - mr
        ci = im - mi
        vrr = _cdot(cr, cr) / m
        vri = _cdot(cr, ci) / m
        vii = _cdot(ci, ci) / m
        mom = state.momentum
        rdt = state.running_mean.dtype
        state.running_mean = ComplexTensor(mom * state.running_mean.re + (1 - mom) * mr,
                                           mom * state.running_mean.im + (1 - mom) * mi, dtype=rdt)
        state.running_cov_diag = ComplexTensor(mom * state.running_cov_diag.re + (1 - mom) * vrr,
                                               mom * state.running_cov_diag.im + (1 - mom) * vii,
                                               dtype=rdt)
        state.running_cov_off = ComplexTensor(mom * state.running_cov_off.re + (1 - mom) * vri,
                                              np.zeros(c), dtype=rdt)
        state.num_batches += 1
    else:
        mr = state.running_mean.re.astype(dt)
        mi = state.running_mean.im.astype(dt)
        cr = re - mr
        ci = im - mi
        vrr = state.running_cov_diag.re.astype(dt)
        vii = state.running_cov_diag.im.astype(dt)
        vri = state.running_cov_off.re.astype(dt)
    a, b, d = vrr + eps, vri, vii + eps
    w11, w12, w22, (s, t, k) = _inv_sqrt_2x2(a, b, d)
    grr = state.gamma_diag.value.re.astype(dt)
    gii = state.gamma_diag.value.im.astype(dt)
    gri = state.gamma_off.value.re.astype(dt)
    # out = gamma W c + beta, with P = gamma W
    p11 = grr * w11 + gri * w12
    p12 = grr * w12 + gri * w22
    p21 = gri * w11 + gii * w12
    p22 = gri * w12 + gii * w22
    outr = cr * p11
    outr += ci * p12
    outr += state.beta.value.re.astype(dt)
    outi = cr * p21
    outi += ci * p22
    outi += state.beta.value.im.astype(dt)
    params = (state.gamma_diag, state.gamma_off, state.beta)

    def bw(g):
        gor = g.re.reshape(-1, c)
        goi = g.im.reshape(-1, c)
        srr, sri = _cdot(gor, cr), _cdot(gor, ci)
        sir, sii = _cdot(goi, cr), _cdot(goi, ci)
        sgr, sgi = _csum(gor), _csum(goi)
        g_grr = w11 * srr + w12 * sri
        g_gii = w12 * sir + w22 * sii
        g_gri = w12 * srr + w22 * sri + w11 * sir + w12 * sii
        # gc = (gamma W)^T g + covariance path
        gcr = gor * p11
        gcr += goi * p21
        gci = gor * p12
        gci += goi * p22
        if train:
            gW11 = grr * srr + gri * sir
            gW22 = gri * sri + gii * sii
            gW12 = grr * sri + gri * sii + gri * srr + gii * sir
            ds = (d / (2 * s), -b / s, a / (2 * s))  # ds/da, ds/db, ds/dd
            dtr = (1.0, 0.0, 1.0)
            grads = []
            for q in range(3):
                dt_ = (dtr[q] + 2 * ds[q]) / (2 * t)
                dk = -k * (ds[q] / s + dt_ / t)
                dw11 = (k if q == 2 else 0.0) + ds[q] * k + (d + s) * dk
                dw12 = (-k if q == 1 else 0.0) - b * dk
                dw22 = (k if q == 0 else 0.0) + ds[q] * k + (a + s) * dk
                grads.append(gW11 * dw11 + gW12 * dw12 + gW22 * dw22)
            ga, gb, gd = grads
            gcr += cr * (2 * ga / m)
            gcr += ci * (gb / m)
            gci += cr * (gb / m)
            gci += ci * (2 * gd / m)
            # mean removal; the centred planes themselves average to zero
            gcr -= (p11 * sgr + p21 * sgi) / m
            gci -= (p12 * sgr + p22 * sgi) / m
        pdt = state.beta.value.dtype
        return (ComplexTensor(gcr.reshape(shape), gci.reshape(shape)),
                ComplexTensor(g_grr, g_gii, dtype=pdt),
                ComplexTensor(g_gri, np.zeros_like(g_gri), dtype=pdt),
                ComplexTensor(sgr, sgi, dtype=pdt))

    out = ComplexTensor(outr.reshape(shape), outi.reshape(shape))
    return Node(out, (x,) + params, bw, "batchnorm")
