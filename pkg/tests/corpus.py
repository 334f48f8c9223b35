"""Deterministic baseline-JPEG corpus for tests.

Images are synthesized (gradients, blobs, stripes, noise) and encoded with
both Pillow and OpenCV across colour modes, chroma subsampling, quality,
optimized Huffman tables and restart intervals, so every code path of the
scanner sees real encoder output.
"""

import io

import cv2
import numpy as np
from PIL import Image


def synth_pixels(rng, height, width, channels):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    img = np.zeros((height, width, channels), np.float32)
    for c in range(channels):
        a, b = rng.uniform(-1.5, 1.5, 2)
        img[..., c] = 128 + 60 * np.sin(a * xx / 9 + c) * np.cos(b * yy / 11)
    for _ in range(rng.integers(0, 6)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(2, max(3, min(height, width) / 2))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[mask] = rng.uniform(0, 255, channels)
    if rng.random() < 0.5:
        period = rng.integers(2, 9)
        img[(xx.astype(int) // period) % 2 == 0] *= rng.uniform(0.4, 1.0)
    img += rng.normal(0, rng.uniform(0, 40), img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


_CV_SAMPLING = {
    "444": cv2.IMWRITE_JPEG_SAMPLING_FACTOR_444,
    "422": cv2.IMWRITE_JPEG_SAMPLING_FACTOR_422,
    "420": cv2.IMWRITE_JPEG_SAMPLING_FACTOR_420,
    "411": cv2.IMWRITE_JPEG_SAMPLING_FACTOR_411,
    "440": cv2.IMWRITE_JPEG_SAMPLING_FACTOR_440,
}
_PIL_SUBSAMPLING = {"444": 0, "422": 1, "420": 2}


def encode(pixels, backend, quality, sampling="420", optimize=False, restart=0):
    gray = pixels.ndim == 2 or pixels.shape[2] == 1
    if backend == "cv2":
        params = [cv2.IMWRITE_JPEG_QUALITY, int(quality), cv2.IMWRITE_JPEG_OPTIMIZE, int(optimize)]
        if restart:
            params += [cv2.IMWRITE_JPEG_RST_INTERVAL, int(restart)]
        if not gray:
            params += [cv2.IMWRITE_JPEG_SAMPLING_FACTOR, _CV_SAMPLING[sampling]]
        ok, buf = cv2.imencode(".jpg", pixels, params)
        assert ok
        return buf.tobytes()
    im = Image.fromarray(pixels[..., 0] if gray and pixels.ndim == 3 else pixels)
    kw = {"quality": int(quality), "optimize": bool(optimize)}
    if not gray:
        kw["subsampling"] = _PIL_SUBSAMPLING.get(sampling, 2)
    if restart:
        kw["restart_marker_blocks"] = int(restart)
    out = io.BytesIO()
    im.save(out, "JPEG", **kw)
    return out.getvalue()


def make_image(seed, min_side=8, max_side=200):
    """One corpus entry: (name, jpeg bytes, recipe dict)."""
    rng = np.random.default_rng(seed)
    h = int(rng.integers(min_side, max_side + 1))
    w = int(rng.integers(min_side, max_side + 1))
    gray = rng.random() < 0.25
    backend = "cv2" if rng.random() < 0.5 else "pil"
    samplings = list(_CV_SAMPLING) if backend == "cv2" else list(_PIL_SUBSAMPLING)
    sampling = samplings[rng.integers(len(samplings))]
    quality = int(rng.integers(20, 99))
    optimize = bool(rng.random() < 0.3)
    restart = int(rng.choice([0, 0, 0, 1, 2, 4, 8, 16]))
    pixels = synth_pixels(rng, h, w, 1 if gray else 3)
    data = encode(pixels, backend, quality, sampling, optimize, restart)
    recipe = dict(seed=seed, height=h, width=w, gray=gray, backend=backend, sampling=sampling,
                  quality=quality, optimize=optimize, restart=restart)
    name = f"img{seed:04d}_{backend}_{'gray' if gray else sampling}_q{quality}" + (
        f"_rst{restart}" if restart else "") + ("_opt" if optimize else "")
    return name, data, recipe


def corpus(n, seed0=0, **kw):
    return [make_image(seed0 + i, **kw)[:2] for i in range(n)]
