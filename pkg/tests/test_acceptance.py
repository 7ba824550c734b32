"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (or ``python tests/test_acceptance.py``)
to see the lines as they happen; they are also repeated in the pytest
terminal summary. Criteria 8 and 9 train two networks and take the bulk of
the runtime.
"""
import sys
import time

import numpy as np
import pytest

from complexiris import baseline as bl
from complexiris import cli
from complexiris import evaluation as ev
from complexiris import gradcheck as G
from complexiris import layers as Ly
from complexiris import loss as L
from complexiris import model as M
from complexiris import preprocess as pp
from complexiris import synthdata as sd
from complexiris import train as T
from complexiris.ctensor import ComplexTensor
from oracles import brute_force_eer, brute_force_rates, conv_block_real, conv_scalar_loop, etl_loop, fd_loop, shift_loop

RESULTS = []


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _ct(rng, *shape):
    return ComplexTensor(rng.standard_normal(shape), rng.standard_normal(shape))


# ---------------------------------------------------------------------------

def test_criterion_01_conv_oracles():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        kh, kw = rng.integers(1, 4, 2)
        h, w = kh + rng.integers(0, 5), kw + rng.integers(0, 5)
        stride = tuple(int(s) for s in rng.integers(1, 3, 2))
        padding = tuple(int(p) for p in rng.integers(0, 3, 2))
        x = _ct(rng, int(rng.integers(1, 3)), int(h), int(w), int(rng.integers(1, 4)))
        k = _ct(rng, int(kh), int(kw), x.shape[-1], int(rng.integers(1, 4)))
        out = Ly.complex_conv2d(x, Ly.ConvSpec(k, stride, padding)).to_complex()
        ref = conv_scalar_loop(x.to_complex(), k.to_complex(), stride, padding)
        blk = conv_block_real(x.to_complex(), k.to_complex(), stride, padding)
        scale = np.abs(ref).max()
        worst = max(worst, np.abs(out - ref).max() / scale, np.abs(out - blk).max() / scale)
    secs = time.perf_counter() - t0
    record(1, worst < 1e-10 and secs < 30, f"50 cases, max rel error {worst:.2e}, {secs:.1f} s")


def test_criterion_02_gradients():
    t0 = time.perf_counter()
    res = G.run_all(seed=0)
    secs = time.perf_counter() - t0
    worst = max(res, key=lambda r: r.max_rel_error)
    ok = all(r.passed for r in res) and secs < 120
    record(2, ok, f"{len(res)} ops, worst {worst.op} {worst.max_rel_error:.2e}, {secs:.1f} s")


def test_criterion_03_spectral_pooling():
    rng = np.random.default_rng(103)
    dc = ib = idem = 0.0
    for h, w, oh, ow in ((8, 8, 4, 4), (7, 10, 3, 5), (16, 64, 8, 32), (6, 9, 4, 4), (5, 5, 1, 1)):
        x = _ct(rng, 2, h, w, 3)
        pooled = Ly.spectral_pool(x, oh, ow)
        dc = max(dc, np.abs(pooled.to_complex().mean((1, 2)) - x.to_complex().mean((1, 2))).max())
        small = _ct(rng, 2, oh, ow, 3)
        band = Ly.spectral_upsample(small, h, w)
        back = Ly.spectral_upsample(Ly.spectral_pool(band, oh, ow), h, w)
        ib = max(ib, np.abs(back.to_complex() - band.to_complex()).max())

        def proj(t):
            return Ly.spectral_upsample(Ly.spectral_pool(t, oh, ow), h, w)

        once = proj(x)
        idem = max(idem, np.abs(proj(once).to_complex() - once.to_complex()).max())
    ok = dc <= 1e-9 and ib <= 1e-6 and idem <= 1e-9
    record(3, ok, f"DC {dc:.1e}, band-limited {ib:.1e}, idempotence {idem:.1e}")


def test_criterion_04_batchnorm():
    # batches have per-channel covariance eigenvalues >= 1; below that the
    # epsilon regulariser alone shifts the output covariance by eps / lambda
    rng = np.random.default_rng(104)
    worst_mean = worst_cov = 0.0
    for _ in range(10):
        n, h, w, c = rng.integers(2, 6), rng.integers(3, 8), rng.integers(3, 8), rng.integers(1, 5)
        z = rng.standard_normal((n, h, w, c, 2))
        for ch in range(c):
            u, _, vt = np.linalg.svd(rng.standard_normal((2, 2)))
            a = u @ np.diag(rng.uniform(1.5, 5.0, 2)) @ vt
            z[..., ch, :] = z[..., ch, :] @ a.T + rng.uniform(-3, 3, 2)
        out = Ly.complex_batchnorm(ComplexTensor(z[..., 0], z[..., 1]), Ly.BNState.identity(int(c)), "train")
        o = out.to_complex().reshape(-1, int(c))
        mean = o.mean(0)
        re, im = o.real - mean.real, o.imag - mean.imag
        cov = np.stack([[np.mean(re * re, 0), np.mean(re * im, 0)],
                        [np.mean(re * im, 0), np.mean(im * im, 0)]])
        worst_mean = max(worst_mean, np.abs(mean).max())
        worst_cov = max(worst_cov, np.abs(cov - np.eye(2)[:, :, None]).max())
    record(4, worst_mean <= 1e-6 and worst_cov <= 1e-5,
           f"max |mean| {worst_mean:.1e}, max |cov - I| {worst_cov:.1e}")


def test_criterion_05_loss_oracles():
    rng = np.random.default_rng(105)
    err = 0.0
    for _ in range(10):
        n, h, w, c = 5, 3, 10, 2
        vals = _ct(rng, n, h, w, c)
        masks = rng.random((n, h, w)) > 0.25
        masks[:, 0, :] = True
        fms = [L.FeatureMap(vals[i], masks[i]) for i in range(n)]
        z = vals.to_complex()
        err = max(err, abs(L.fractional_distance(fms[0], fms[1]) - fd_loop(z[0], masks[0], z[1], masks[1])))
        d, _ = L.shift_distance(fms[2], fms[3], 4)
        err = max(err, abs(d - shift_loop(z[2], masks[2], z[3], masks[3], 4)[0]))
        trip = [(0, 1, 2), (3, 4, 0), (2, 0, 4)]
        batch = [L.Triplet(fms[a], fms[p], fms[q]) for a, p, q in trip]
        err = max(err, abs(L.extended_triplet_loss(batch, 0.2, 4) - etl_loop(z, masks, trip, 0.2, 4)))
    strip = np.random.default_rng(5).random((64, 256))
    f = L.FeatureMap(ComplexTensor(strip[..., None]), np.ones((64, 256), bool))
    zero = all(L.shift_distance(f, f.shifted(b), 4)[0] == 0.0 for b in range(-4, 5))
    record(5, err < 1e-10 and zero, f"max oracle error {err:.1e}, shifted self-distance exactly 0: {zero}")


def test_criterion_06_iriscode_statistics():
    # independent textures at the default synthetic contrast, raw (unshifted) distance
    codes = [bl.encode(sd.base_texture(np.random.default_rng([606, i]))) for i in range(2000)]
    d = np.array([bl.hamming(codes[2 * i], codes[2 * i + 1], 0)[0] for i in range(1000)])
    nvalid = min(2 * int((codes[2 * i].mask & codes[2 * i + 1].mask).sum()) for i in range(1000))
    self_d = bl.hamming(codes[0], codes[0], 4)[0]
    # rotations by whole code columns (two strip columns each)
    rot_d = 0.0
    for k, shift in enumerate((2, -4, 6, -8)):
        tex = sd.base_texture(np.random.default_rng([607, k]))
        rot_d = max(rot_d, bl.hamming(bl.encode(tex), bl.encode(np.roll(tex, shift, 1)), 4)[0])
    ok = abs(d.mean() - 0.5) <= 0.02 and nvalid >= 8192 and self_d == 0 and rot_d < 0.05
    record(6, ok, f"mean HD {d.mean():.4f} over 1000 pairs (min {nvalid} valid bits), "
                  f"self {self_d}, rotated {rot_d:.4f}")


def test_criterion_07_preprocessing_geometry():
    worst = 0.0
    for cx, cy, rp, rl in ((97.3, 103.6, 23.4, 67.8), (105.0, 96.0, 30.0, 80.0), (100.5, 100.5, 18.2, 55.1)):
        g = pp.segment(sd.render_eye(cx=cx, cy=cy, r_pupil=rp, r_limbus=rl))
        worst = max(worst, abs(g.pupil.cx - cx), abs(g.pupil.cy - cy), abs(g.pupil.r - rp),
                    abs(g.limbus.cx - cx), abs(g.limbus.cy - cy), abs(g.limbus.r - rl))
    yy, xx = np.mgrid[0:200, 0:200]
    r = np.hypot(xx - 101, yy - 98)
    geom = pp.IrisGeometry(pp.Circle(101, 98, 20), pp.Circle(101, 98, 50))
    n = pp.rubber_sheet(0.5 + 0.4 * np.sin(r / 3), geom)
    row_dev = np.abs(n.strip - n.strip.mean(1, keepdims=True)).max()
    kw = dict(cx=97.3, cy=103.6, r_pupil=23.4, r_limbus=67.8)
    geom = pp.IrisGeometry(pp.Circle(97.3, 103.6, 23.4), pp.Circle(97.3, 103.6, 67.8))
    a = pp.rubber_sheet(sd.render_eye(**kw), geom).strip
    col_err = 0
    for dth in (0.05, -0.2, 0.7, -1.3):
        b = pp.rubber_sheet(sd.render_eye(rotation=dth, **kw), geom).strip
        errs = [np.abs(np.roll(a, s, 1)[4:60] - b[4:60]).mean() for s in range(-128, 128)]
        col_err = max(col_err, abs((int(np.argmin(errs)) - 128) - round(256 * dth / (2 * np.pi))))
    ok = worst <= 1 and row_dev <= 1e-2 and col_err <= 1
    record(7, ok, f"circle error {worst:.2f} px, radial row deviation {row_dev:.1e}, "
                  f"rotation shift error {col_err} col")


# ---------------------------------------------------------------------------
# criteria 8 and 9 share the dataset and the trained complex model

@pytest.fixture(scope="module")
def desk():
    spec = sd.SynthSpec(20, 10, noise_std=0.08, max_rotation_columns=8, occlusion_probability=0.3, seed=7)
    S, Mk, ids, splits = sd.generate_arrays(spec)
    S = S / 255.0
    tr = np.array([s == "train" for s in splits])
    te = np.array([s == "test" for s in splits])
    return dict(S=S, M=Mk, ids=ids, tr=tr, te=te, cache={})


def _test_scores(model, d):
    f, fm = T.extract_features(model, d["S"][d["te"]], d["M"][d["te"]])
    D = L.pairwise_shift_distance(f, fm, 4)
    return ev.scoreset_from_rows(ev.score_matrix(D, d["ids"][d["te"]]))


def _trained(d, real):
    if real not in d["cache"]:
        cfg = M.tiny_preset(real_valued=real)
        tc = T.TrainConfig(epochs=30, seed=7)
        init = ev.eer(_test_scores(M.build(cfg, tc.seed), d))
        res = T.train(d["S"][d["tr"]], d["M"][d["tr"]], d["ids"][d["tr"]], cfg, tc)
        d["cache"][real] = (res, init, _test_scores(res.model, d))
    return d["cache"][real]


def test_criterion_08_desk_training(desk):
    res, init_eer, scores = _trained(desk, False)
    loss_ok = res.epoch_loss[-1] < res.epoch_loss[0]
    trained_eer = ev.eer(scores)
    gap, se = ev.separation_gap(scores)
    ok = loss_ok and trained_eer < init_eer and gap >= 3 * se
    record(8, ok, f"ETL {res.epoch_loss[0]:.4f} -> {res.epoch_loss[-1]:.4f}; test EER {init_eer:.4f} -> "
                  f"{trained_eer:.4f}; gap {gap:.3e} = {gap / se:.1f} SE; {res.seconds / 60:.1f} min")


def test_criterion_09_complex_vs_real(desk):
    _, _, cplx = _trained(desk, False)
    res, _, real = _trained(desk, True)
    ec, er = ev.eer(cplx), ev.eer(real)
    record(9, ec <= er, f"complex EER {ec:.4f}, real EER {er:.4f} ({res.seconds / 60:.1f} min)")


# ---------------------------------------------------------------------------

def test_criterion_10_determinism_and_serialization(tmp_path):
    data = tmp_path / "data"
    assert cli.main(["synth", "--ids", "4", "--samples", "3", "--seed", "3", "--out", str(data)]) == 0
    args = ["--manifest", str(data / "manifest.csv"), "--deterministic", "--seed", "3", "--epochs", "2",
            "--steps-per-epoch", "1", "--ids-per-batch", "2", "--samples-per-id", "2", "--triplets", "4"]
    for run in ("a", "b"):
        assert cli.main(["train", "--out", str(tmp_path / run), *args]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("loss.csv", "model.cirn", "train_config.txt"))

    m = M.build(M.tiny_preset(), 11)
    M.save(m, tmp_path / "c1.cirn")
    M.save(M.load(tmp_path / "c1.cirn"), tmp_path / "c2.cirn")
    ckpt = (tmp_path / "c1.cirn").read_bytes() == (tmp_path / "c2.cirn").read_bytes()

    sets = [([0.1, 0.2, 0.3], [0.4, 0.5, 0.6]),
            ([0.25, 0.5], [0.25, 0.5]),
            ([0.0, 0.25, 0.5, 0.75], [0.125, 0.375, 0.625, 0.875, 1.0]),
            ([0.5, 0.5, 0.5, 1.0], [0.0, 0.5, 0.75]),
            ([0.3, 0.6, 0.9], [0.1, 0.2, 0.3, 0.4])]
    roc_ok = eer_ok = True
    for g, i in sets:
        s = ev.ScoreSet(g, i)
        _, far, frr = ev.roc(s)
        ref = brute_force_rates(g, i)
        roc_ok &= far.tolist() == [a for a, _ in ref] and frr.tolist() == [b for _, b in ref]
        eer_ok &= ev.eer(s) == brute_force_eer(g, i)
    ok = same and ckpt and roc_ok and eer_ok
    record(10, ok, f"rerun identical {same}, checkpoint round trip {ckpt}, "
                   f"ROC exact {roc_ok}, EER exact {eer_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
