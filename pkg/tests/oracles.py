"""Independent reference implementations used as test oracles."""
import itertools

import numpy as np


def conv_scalar_loop(x, k, stride, padding):
    """Complex cross-correlation by explicit sliding-window loops.

    x: complex (N, H, W, Cin); k: complex (kH, kW, Cin, Cout).
    """
    n, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    (sh, sw), (ph, pw) = stride, padding
    xp = np.zeros((n, h + 2 * ph, w + 2 * pw, cin), complex)
    xp[:, ph:ph + h, pw:pw + w] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, ho, wo, cout), complex)
    for b, i, j, co in itertools.product(range(n), range(ho), range(wo), range(cout)):
        acc = 0j
        for u in range(kh):
            for v in range(kw):
                for ci in range(cin):
                    acc += xp[b, i * sh + u, j * sw + v, ci] * k[u, v, ci, co]
        out[b, i, j, co] = acc
    return out


def _real_conv(x, k, stride, padding):
    n, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    (sh, sw), (ph, pw) = stride, padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            win = xp[:, i * sh:i * sh + kh, j * sw:j * sw + kw, :]
            out[:, i, j] = np.einsum("nuvc,uvcd->nd", win, k)
    return out


def conv_block_real(x, k, stride, padding):
    """Two-real-plane formulation: stack (A; B) and use the real block kernel
    [[x, -y], [y, x]] so that out = (A*x - B*y) + i (B*x + A*y)."""
    A, B = x.real, x.imag
    kx, ky = k.real, k.imag
    stacked = np.concatenate([A, B], axis=-1)
    top = np.concatenate([kx, -ky], axis=2)   # real output
    bot = np.concatenate([ky, kx], axis=2)    # imaginary output
    block = np.concatenate([top, bot], axis=3)
    out = _real_conv(stacked, block, stride, padding)
    cout = k.shape[3]
    return out[..., :cout] + 1j * out[..., cout:]


def fd_loop(f1, m1, f2, m2):
    """Fractional distance by explicit loops over valid cells."""
    h, w, c = f1.shape
    total, count = 0.0, 0
    for y in range(h):
        for x in range(w):
            if m1[y, x] and m2[y, x]:
                count += 1
                for ch in range(c):
                    d = f1[y, x, ch] - f2[y, x, ch]
                    total += d.real ** 2 + d.imag ** 2
    if count == 0:
        raise ValueError("empty overlap")
    return total / count


def shift_loop(f1, m1, f2, m2, B):
    best = None
    for b in range(-B, B + 1):
        try:
            d = fd_loop(np.roll(f1, b, 1), np.roll(m1, b, 1), f2, m2)
        except ValueError:
            continue
        if best is None or d < best[0] or (d == best[0] and (abs(b), b) < (abs(best[1]), best[1])):
            best = (d, b)
    return best


def etl_loop(feats, masks, triplets, alpha, B):
    total = 0.0
    for a, p, n in triplets:
        dap = shift_loop(feats[a], masks[a], feats[p], masks[p], B)[0]
        dan = shift_loop(feats[a], masks[a], feats[n], masks[n], B)[0]
        total += max(0.0, dap - dan + alpha)
    return total / len(triplets)


def brute_force_rates(genuine, impostor):
    """(FAR, FRR) at every candidate threshold, with a leading (0, 1) point."""
    pts = [(0.0, 1.0)]
    for t in sorted(set(genuine) | set(impostor)):
        far = sum(1 for s in impostor if s <= t) / len(impostor)
        frr = sum(1 for s in genuine if s > t) / len(genuine)
        pts.append((far, frr))
    return pts


def brute_force_eer(genuine, impostor):
    """Scan consecutive ROC points for the first FAR >= FRR crossing and
    intersect the segment with the diagonal."""
    pts = brute_force_rates(genuine, impostor)
    for k, (far, frr) in enumerate(pts):
        if far >= frr:
            if far == frr or k == 0:
                return far
            f0, r0 = pts[k - 1]
            # solve f0 + t (far - f0) = r0 + t (frr - r0)
            t = (r0 - f0) / ((far - f0) - (frr - r0))
            return f0 + t * (far - f0)
    raise AssertionError("ROC never crosses the diagonal")
