"""Dataset ingestion, degradation synthesis, and image-quality metrics.

Pixels live on the 8-bit gray scale [0, 255] throughout; measurements are
kept unclipped (the degradation model is linear-Gaussian) and restored
images are clipped only when exported to files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams, forward
from .operators import LinearOperator
from .rng import Stream, derive

_TAG_NOISE = 0x4015E
_TAG_PATCH = 0x9A7C8
_TAG_SYNTH = 0x57207
_TAG_EXTRA = 0xBE7A0


class IdxParseError(ValueError):
    """Structured failure while reading an IDX file."""


class PgmParseError(ValueError):
    """Structured failure while reading a binary PGM file."""


@dataclass
class Image:
    """Square grayscale raster stored as a flat float vector."""

    side: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).ravel()
        if self.side < 1 or self.pixels.size != self.side * self.side:
            raise ValueError(
                f"pixel count {self.pixels.size} does not match side {self.side}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("image pixels must be finite")

    def as_2d(self) -> np.ndarray:
        return self.pixels.reshape(self.side, self.side)


@dataclass
class Raster:
    """Possibly non-square grayscale raster (e.g. a loaded PGM)."""

    rows: int
    cols: int
    pixels: np.ndarray = field(repr=False)

    def as_2d(self) -> np.ndarray:
        return self.pixels.reshape(self.rows, self.cols)


@dataclass
class Dataset:
    """Aligned clean/degraded pairs plus the recipe that produced them."""

    side: int
    clean: np.ndarray  # (n, N)
    degraded: np.ndarray  # (n, M)
    degradation: dict
    noise_alpha: float
    seed: int

    def __len__(self) -> int:
        return self.clean.shape[0]


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise IdxParseError(
            f"truncated IDX file: {what} needs bytes [{offset}, {offset + count}) "
            f"but the file holds {len(data)} bytes"
        )
    return data[offset:offset + count]


def load_idx(images_path: str, labels_path: str | None = None) -> list[Image]:
    """Parse big-endian IDX image data (magic 0x00000803) into Images.

    When ``labels_path`` is given, its magic (0x00000801) and item count are
    validated against the image count; label values are not returned since
    restoration never uses them.
    """
    with open(images_path, "rb") as f:
        data = f.read()
    (magic,) = struct.unpack(">I", _read_exact(data, 0, 4, "magic"))
    if magic != 0x00000803:
        raise IdxParseError(
            f"bad IDX image magic 0x{magic:08x} at offset 0 (expected 0x00000803)"
        )
    count, rows, cols = struct.unpack(">III", _read_exact(data, 4, 12, "dimensions"))
    if rows != cols:
        raise IdxParseError(f"only square images supported, got {rows}x{cols}")
    payload = _read_exact(data, 16, count * rows * cols, f"{count} images")
    if len(data) > 16 + count * rows * cols:
        raise IdxParseError(
            f"trailing bytes: expected {16 + count * rows * cols}, found {len(data)}"
        )
    if labels_path is not None:
        with open(labels_path, "rb") as f:
            ldata = f.read()
        (lmagic,) = struct.unpack(">I", _read_exact(ldata, 0, 4, "label magic"))
        if lmagic != 0x00000801:
            raise IdxParseError(
                f"bad IDX label magic 0x{lmagic:08x} (expected 0x00000801)"
            )
        (lcount,) = struct.unpack(">I", _read_exact(ldata, 4, 4, "label count"))
        if lcount != count:
            raise IdxParseError(f"label count {lcount} != image count {count}")
    if count == 0:
        return []
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return [Image(int(rows), arr[i * rows * cols:(i + 1) * rows * cols])
            for i in range(count)]


def _pgm_tokens(data: bytes):
    """Header tokens of a PGM, skipping whitespace and # comments."""
    i = 0
    tokens = []
    while len(tokens) < 4:
        if i >= len(data):
            raise PgmParseError("unexpected end of PGM header")
        c = data[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte terminates the header


def load_pgm(path: str) -> Raster:
    """Read a binary (P5) PGM with maxval 255."""
    with open(path, "rb") as f:
        data = f.read()
    tokens, start = _pgm_tokens(data)
    if tokens[0] != b"P5":
        raise PgmParseError(f"not a binary PGM: magic {tokens[0]!r} (expected P5)")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmParseError(f"non-numeric PGM header field: {exc}") from exc
    if maxval != 255:
        raise PgmParseError(f"unsupported PGM maxval {maxval} (expected 255)")
    if rows < 1 or cols < 1:
        raise PgmParseError(f"bad PGM dimensions {cols}x{rows}")
    need = rows * cols
    body = data[start:start + need]
    if len(body) < need:
        raise PgmParseError(
            f"truncated PGM payload: expected {need} bytes, found {len(body)}"
        )
    pixels = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    return Raster(rows=rows, cols=cols, pixels=pixels)


def save_pgm(path: str, raster_2d: np.ndarray) -> None:
    """Write a 2-D array as binary PGM, clipping and rounding to [0, 255]."""
    a = np.asarray(raster_2d)
    if a.ndim != 2:
        raise ValueError("save_pgm expects a 2-D array")
    body = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        f.write(body.tobytes())


# ---------------------------------------------------------------------------
# Patches, degradation, splits
# ---------------------------------------------------------------------------


def extract_patches(source: Image | Raster, q: int, count: int, seed: int) -> list[Image]:
    """``count`` random Q x Q crops at seeded uniform positions."""
    if isinstance(source, Image):
        rows = cols = source.side
    else:
        rows, cols = source.rows, source.cols
    if q < 1 or q > rows or q > cols:
        raise ValueError(f"patch size {q} does not fit a {rows}x{cols} raster")
    grid = source.as_2d()
    stream = Stream(derive(seed, _TAG_PATCH))
    rr = stream.integers(count, rows - q + 1)
    cc = stream.integers(count, cols - q + 1)
    return [Image(q, grid[r:r + q, c:c + q].copy()) for r, c in zip(rr, cc)]


def degrade(clean: np.ndarray, a_op: LinearOperator, alpha: float,
            seed: int) -> np.ndarray:
    """z = A x + alpha * eta with seeded standard-normal eta (never clipped)."""
    if alpha < 0:
        raise ValueError("noise level alpha must be nonnegative")
    x = np.asarray(clean, dtype=np.float64)
    z = a_op.apply(x)
    if alpha == 0:
        return z
    return z + alpha * Stream(derive(seed, _TAG_NOISE)).normal(z.size).reshape(z.shape)


def degrade_set(clean: np.ndarray, side: int, a_op: LinearOperator, alpha: float,
                seed: int) -> Dataset:
    """Degrade a stack of images, one derived noise stream per sample."""
    clean = np.atleast_2d(np.asarray(clean, dtype=np.float64))
    degraded = np.empty((clean.shape[0], a_op.out_dim))
    for s in range(clean.shape[0]):
        degraded[s] = degrade(clean[s], a_op, alpha, derive(seed, s))
    return Dataset(side=side, clean=clean, degraded=degraded,
                   degradation=a_op.spec(), noise_alpha=float(alpha), seed=int(seed))


def split(dataset: Dataset, train_frac: float, val_frac: float,
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded permutation, then contiguous train/val/test slices."""
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1 + 1e-12:
        raise ValueError("fractions must be nonnegative and sum to at most 1")
    n = len(dataset)
    perm = Stream(derive(seed, 0x59117)).permutation(n)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    n_val = min(n_val, n - n_train)
    cuts = [perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]]

    def take(idx):
        return Dataset(side=dataset.side, clean=dataset.clean[idx],
                       degraded=dataset.degraded[idx],
                       degradation=dataset.degradation,
                       noise_alpha=dataset.noise_alpha, seed=dataset.seed)

    return take(cuts[0]), take(cuts[1]), take(cuts[2])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

_PEAK = 255.0


def psnr(x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    """10 log10(255^2 / MSE); +inf when the images are identical."""
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x_ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(_PEAK * _PEAK / mse))


def psnr_to_mse(value_db: float) -> float:
    return _PEAK * _PEAK * 10.0 ** (-value_db / 10.0)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t**2) / (2.0 * sigma**2))
    return g / g.sum()


def _band_matrix(side: int, kernel: np.ndarray) -> np.ndarray:
    k = kernel.size
    rows = side - k + 1
    m = np.zeros((rows, side))
    for i in range(rows):
        m[i, i:i + k] = kernel
    return m


def ssim(x_hat: np.ndarray, x_ref: np.ndarray, side: int | None = None) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, dynamic range 255, averaged over valid window positions.

    Images smaller than the window fall back to one uniform global window.
    """
    a = np.asarray(x_hat, dtype=np.float64).ravel()
    b = np.asarray(x_ref, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if side is None:
        side = int(round(np.sqrt(a.size)))
    if side * side != a.size:
        raise ValueError("ssim needs square images (or pass side explicitly)")
    c1 = (0.01 * _PEAK) ** 2
    c2 = (0.03 * _PEAK) ** 2
    x = a.reshape(side, side)
    y = b.reshape(side, side)
    with np.errstate(over="ignore", invalid="ignore"):
        if side < 11:
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            cxy = float(np.mean((x - mx) * (y - my)))
            return float(((2 * mx * my + c1) * (2 * cxy + c2))
                         / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
        w = _band_matrix(side, _gaussian_window())

        def smooth(img):
            return w @ img @ w.T

        mx, my = smooth(x), smooth(y)
        vx = smooth(x * x) - mx * mx
        vy = smooth(y * y) - my * my
        cxy = smooth(x * y) - mx * my
        score = ((2 * mx * my + c1) * (2 * cxy + c2)) \
            / ((mx * mx + my * my + c1) * (vx + vy + c2))
        return float(score.mean())


# ---------------------------------------------------------------------------
# Robustness protocol and synthetic data
# ---------------------------------------------------------------------------


def robustness_eval(params: NetworkParams, dataset: Dataset, beta_list: list[float],
                    seed: int) -> list[dict]:
    """Evaluate on z + beta * eta for each beta, with drops relative to beta=0.

    One noise realization is drawn per sample (derived from ``seed``) and
    scaled by each beta, so the sweep isolates the noise amplitude.
    """
    n = len(dataset)
    eta = np.empty_like(dataset.degraded)
    for s in range(n):
        eta[s] = Stream(derive(seed, _TAG_EXTRA, s)).normal(eta.shape[1])
    betas = [0.0] + [float(b) for b in beta_list if b != 0]
    rows = []
    for beta in betas:
        out, _ = forward(params, dataset.degraded + beta * eta)
        ps = float(np.mean([psnr(out[i], dataset.clean[i]) for i in range(n)]))
        ss = float(np.mean([ssim(out[i], dataset.clean[i], side=dataset.side)
                            for i in range(n)]))
        rows.append({"beta": beta, "psnr": ps, "ssim": ss})
    base = rows[0]
    for r in rows:
        r["psnr_drop_pct"] = 100.0 * (base["psnr"] - r["psnr"]) / base["psnr"]
        r["ssim_drop_pct"] = 100.0 * (base["ssim"] - r["ssim"]) / base["ssim"]
    return rows


_SEGMENTS = {0: "ABCDEF", 1: "BC", 2: "ABGED", 3: "ABGCD", 4: "FGBC",
             5: "AFGCD", 6: "AFGEDC", 7: "ABC", 8: "ABCDEFG", 9: "ABCDFG"}


def synthetic_digits(count: int, side: int = 28, seed: int = 0,
                     jitter_frac: float = 0.05) -> np.ndarray:
    """Digit-like glyph images: seven-segment figures with jittered geometry.

    Bright strokes on a dark background, roughly centered, values in
    [0, 255] - a deterministic stand-in for handwritten-digit data in
    desk-scale experiments.  Returns (count, side*side).
    """
    out = np.zeros((count, side * side))
    for s in range(count):
        stream = Stream(derive(seed, _TAG_SYNTH, s, 1))
        u = stream.uniform(6)
        digit = min(int(u[0] * 10), 9)
        w = max(4, int(side * (0.40 + 0.10 * u[1])))
        h = max(6, int(side * (0.60 + 0.10 * u[2])))
        jit = max(1, int(side * jitter_frac))
        x0 = (side - w) // 2 + int((u[3] - 0.5) * 2 * jit)
        y0 = (side - h) // 2 + int((u[4] - 0.5) * 2 * jit)
        x0 = min(max(x0, 0), side - w)
        y0 = min(max(y0, 0), side - h)
        t = max(2, side // 12)
        level = 200.0 + 55.0 * u[5]
        img = np.zeros((side, side))
        midy = y0 + h // 2

        def hseg(y):
            img[max(y, 0):y + t, x0:x0 + w] = level

        def vseg(x, y1, y2):
            img[y1:y2, max(x, 0):x + t] = level

        for seg in _SEGMENTS[digit]:
            if seg == "A":
                hseg(y0)
            elif seg == "D":
                hseg(y0 + h - t)
            elif seg == "G":
                hseg(midy - t // 2)
            elif seg == "F":
                vseg(x0, y0, midy)
            elif seg == "B":
                vseg(x0 + w - t, y0, midy)
            elif seg == "E":
                vseg(x0, midy, y0 + h)
            elif seg == "C":
                vseg(x0 + w - t, midy, y0 + h)
        out[s] = img.ravel()
    return out


def synthetic_strokes(count: int, side: int = 28, seed: int = 0) -> np.ndarray:
    """Handwriting-like test images: bright random strokes on black.

    Returns a (count, side*side) array with values in [0, 255].  Useful as a
    self-contained stand-in for digit datasets in desk-scale experiments.
    """
    from .operators import make_uniform_blur

    blur = make_uniform_blur(3, side)
    images = np.zeros((count, side * side))
    for s in range(count):
        stream = Stream(derive(seed, _TAG_SYNTH, s))
        img = np.zeros((side, side))
        n_strokes = 1 + int(stream.uniform(1)[0] * 3)
        for _ in range(n_strokes):
            u = stream.uniform(4)
            r = 3.0 + u[0] * (side - 6)
            c = 3.0 + u[1] * (side - 6)
            ang = 2.0 * np.pi * u[2]
            steps = int(side * (0.5 + u[3]))
            turns = stream.uniform(steps)
            level = 180.0 + stream.uniform(1)[0] * 75.0
            for t in range(steps):
                ri, ci = int(round(r)), int(round(c))
                if 0 <= ri < side and 0 <= ci < side:
                    img[max(0, ri - 1):ri + 1, max(0, ci - 1):ci + 1] = level
                ang += (turns[t] - 0.5) * 0.9
                r = min(max(r + np.sin(ang), 1.0), side - 2.0)
                c = min(max(c + np.cos(ang), 1.0), side - 2.0)
        images[s] = blur.apply(img.ravel())
    return np.clip(images, 0.0, 255.0)
