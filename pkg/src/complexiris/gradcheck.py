"""Finite-difference checks of every differentiable op in the package.

For a complex parameter p the reference gradient is dL/dRe(p) + i dL/dIm(p),
estimated with central differences on each real coordinate. The error of an
op is max|analytic - numeric| / max|numeric| over all checked coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import layers as Ly
from . import loss as L
from .autograd import Parameter
from .ctensor import ComplexTensor
from .model import CompositeLayer, TransitionBlock

TOLERANCE = 1e-4
STEP = 1e-5
# minimum distance of zReLU inputs, hinge arguments and shift-distance
# runners-up from their decision boundaries
MARGIN = 1e-3
MAX_TRIES = 50


@dataclass
class CheckResult:
    op: str
    max_rel_error: float
    tries: int
    coords: int

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


class _Resample(Exception):
    pass


def _rnd(rng, *shape, scale=1.0):
    return ComplexTensor(scale * rng.standard_normal(shape), scale * rng.standard_normal(shape))


def _projected(out: ag.Node, R: ComplexTensor | None) -> ag.Node:
    """Real scalar Re(sum conj(R) out); passes real scalars through."""
    if R is None:
        return out
    return ag.real_part(ag.sum_all(ag.mul(out, ag.constant(R.conj()))))


def _loss_value(fn, R):
    out = fn()
    if R is None:
        return float(out.value.re)
    return float((R.re * out.value.re + R.im * out.value.im).sum())


def fd_check(fn, params, rng, projected=True, h=STEP, margin_ok=None):
    """Compare analytic and numeric gradients of ``fn`` w.r.t. ``params``.

    ``fn`` builds a fresh graph node on each call. ``margin_ok`` is called
    after the base forward pass and may raise _Resample.
    """
    with Ly.zrelu_margin_probe() as probe:
        out = fn()
    if probe[0] < MARGIN:
        raise _Resample
    if margin_ok is not None:
        margin_ok()
    R = _rnd(rng, *out.shape) if projected else None
    for p in params:
        p.grad = None
    ag.backward(_projected(out, R))
    num_max = 0.0
    diff_max = 0.0
    coords = 0
    for p in params:
        ana = p.grad if p.grad is not None else ComplexTensor.zeros(p.value.shape)
        for plane, ana_plane in ((p.value.re, ana.re), (p.value.im, ana.im)):
            flat = plane.reshape(-1)
            a_flat = np.asarray(ana_plane, np.float64).reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                fp = _loss_value(fn, R)
                flat[k] = orig - h
                fm = _loss_value(fn, R)
                flat[k] = orig
                num = (fp - fm) / (2 * h)
                num_max = max(num_max, abs(num))
                diff_max = max(diff_max, abs(num - a_flat[k]))
                coords += 1
    for p in params:
        p.grad = None
    return diff_max / max(num_max, 1e-12), coords


def _param(t, name):
    return Parameter(t, name=name)


# ---------------------------------------------------------------------------
# cases: each returns (fn, params, projected, margin_ok)
# ---------------------------------------------------------------------------

def case_gabor_conv(rng):
    x = _param(ComplexTensor(rng.random((2, 9, 10, 1)), np.zeros((2, 9, 10, 1))), "x")
    w = _param(Ly.gabor_bank(5, 5, 4), "w")
    return (lambda: Ly.conv2d(x, w, padding=2)), [x, w], True, None


def case_conv_strided(rng):
    x = _param(_rnd(rng, 2, 7, 8, 3), "x")
    w = _param(_rnd(rng, 3, 3, 3, 2), "w")
    return (lambda: Ly.conv2d(x, w, stride=(2, 1), padding=1)), [x, w], True, None


def case_composite(rng):
    layer = CompositeLayer(3, 2, 4, rng, np.float64, False)
    for _, p in layer.named_parameters():
        if p.value.re.size <= 8:  # BN vectors: move gamma and beta off defaults
            p.value = ComplexTensor(p.value.re + 0.1 * rng.standard_normal(p.value.shape),
                                    p.value.im + (0 if p.real_only else 0.1) * rng.standard_normal(p.value.shape))
    x = _param(_rnd(rng, 2, 4, 6, 3), "x")
    params = [x] + [p for _, p in layer.named_parameters()]
    return (lambda: layer(x, True)), params, True, None


def case_transition(rng):
    block = TransitionBlock(3, 2, rng, np.float64, False)
    x = _param(_rnd(rng, 2, 6, 8, 3), "x")
    params = [x] + [p for _, p in block.named_parameters()]
    return (lambda: block(x, True)), params, True, None


def case_zrelu(rng):
    x = _param(_rnd(rng, 2, 4, 5, 3), "x")
    return (lambda: Ly.zrelu_node(x)), [x], True, None


def case_batchnorm(rng):
    st = Ly.BNState(3)
    st.gamma_diag.value = ComplexTensor(1 + 0.2 * rng.standard_normal(3), 1 + 0.2 * rng.standard_normal(3))
    st.gamma_off.value = ComplexTensor(0.3 * rng.standard_normal(3))
    st.beta.value = _rnd(rng, 3)
    x = _param(_rnd(rng, 3, 4, 5, 3), "x")
    return (lambda: Ly.batchnorm(x, st, True)), [x] + st.parameters(), True, None


def case_spectral_pool(rng):
    x = _param(_rnd(rng, 2, 8, 10, 2), "x")
    return (lambda: Ly.spectral_pool_node(x, 4, 5)), [x], True, None


def _shift_gaps(a, b, ma, mb, B):
    vals = []
    for s in L.shift_order(B):
        try:
            vals.append(L.fractional_distance(L.FeatureMap(a, ma).shifted(s), L.FeatureMap(b, mb)))
        except L.EmptyOverlapError:
            pass
    vals.sort()
    return vals[1] - vals[0] if len(vals) > 1 else np.inf


def _masks(rng, n, h, w):
    m = rng.random((n, h, w)) > 0.25
    m[:, 0, 0] = True
    return m


def case_fd(rng):
    a = _param(_rnd(rng, 3, 8, 2), "a")
    b = _param(_rnd(rng, 3, 8, 2), "b")
    m = _masks(rng, 2, 3, 8)
    return (lambda: L.fd_node(a, b, m[0], m[1], 1)), [a, b], False, None


def case_shift_distance(rng):
    a = _param(_rnd(rng, 3, 10, 2), "a")
    b = _param(_rnd(rng, 3, 10, 2), "b")
    m = _masks(rng, 2, 3, 10)

    def ok():
        if _shift_gaps(a.value, b.value, m[0], m[1], 2) < MARGIN:
            raise _Resample

    return (lambda: L.shift_distance_node(a, b, m[0], m[1], 2)), [a, b], False, ok


def case_etl(rng):
    n = 5
    f = _param(_rnd(rng, n, 3, 8, 2, scale=0.3), "features")
    m = _masks(rng, n, 3, 8)
    trip = [(0, 1, 2), (1, 0, 3), (2, 3, 4), (3, 2, 0)]
    alpha = 0.2

    def ok():
        v = f.value
        for a, p, q in trip:
            d = []
            for j in (p, q):
                if _shift_gaps(v[a], v[j], m[a], m[j], 2) < MARGIN:
                    raise _Resample
                d.append(L.shift_distance(L.FeatureMap(v[a], m[a]), L.FeatureMap(v[j], m[j]), 2)[0])
            if abs(d[0] - d[1] + alpha) < MARGIN:
                raise _Resample

    return (lambda: L.etl_node(f, m, trip, alpha, 2)), [f], False, ok


CASES = {
    "gabor_conv": case_gabor_conv,
    "conv_strided": case_conv_strided,
    "composite_layer": case_composite,
    "transition_block": case_transition,
    "zrelu": case_zrelu,
    "batchnorm_train": case_batchnorm,
    "spectral_pool": case_spectral_pool,
    "fractional_distance": case_fd,
    "shift_distance": case_shift_distance,
    "etl": case_etl,
}


def run_case(name, seed=0, h=STEP) -> CheckResult:
    rng = np.random.default_rng([seed, list(CASES).index(name)])
    for tries in range(1, MAX_TRIES + 1):
        fn, params, projected, ok = CASES[name](rng)
        try:
            err, coords = fd_check(fn, params, rng, projected, h, ok)
        except _Resample:
            continue
        return CheckResult(name, err, tries, coords)
    raise RuntimeError(f"{name}: could not draw inputs away from non-smooth points")


def run_all(seed=0, names=None, h=STEP):
    return [run_case(n, seed, h) for n in (names or CASES)]


def format_report(results) -> str:
    lines = [f"{'op':<20} {'max_rel_error':>14} {'coords':>7} {'tries':>5}  status"]
    for r in results:
        lines.append(f"{r.op:<20} {r.max_rel_error:>14.3e} {r.coords:>7d} {r.tries:>5d}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
