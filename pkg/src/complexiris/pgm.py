"""Binary PGM (P5) reading and writing, 8-bit only."""
import numpy as np


class PGMError(ValueError):
    pass


def _tokens(data: bytes, count: int):
    out = []
    pos = 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        out.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    toks, offset = _tokens(data, 4)
    if toks[0] != b"P5":
        raise PGMError(f"{path}: not a binary PGM (magic {toks[0]!r})")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise PGMError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raster = data[offset:offset + w * h]
    if len(raster) != w * h:
        raise PGMError(f"{path}: truncated raster")
    return np.frombuffer(raster, np.uint8).reshape(h, w).copy()


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 2:
        raise PGMError("PGM images must be 2-D")
    if img.dtype != np.uint8:
        raise PGMError("PGM writer expects uint8 pixels")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def to_unit(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def from_unit(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def read_mask(path) -> np.ndarray:
    return read_pgm(path) >= 128


def write_mask(path, mask: np.ndarray):
    write_pgm(path, np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8))
