from typing import Dict

import numpy as np

from app.models.grid import BevRaster


def _to_byte(values: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _header(magic: bytes, width: int, height: int) -> bytes:
    return magic + b"\n%d %d\n255\n" % (width, height)


def pgm(gray: np.ndarray) -> bytes:
    """Binary PGM of a [row, col] array whose row 0 is the lowest y; image top is the highest y."""
    img = np.flipud(gray)
    return _header(b"P5", img.shape[1], img.shape[0]) + np.ascontiguousarray(img).tobytes()


def ppm(rgb: np.ndarray) -> bytes:
    img = np.flipud(rgb)
    return _header(b"P6", img.shape[1], img.shape[0]) + np.ascontiguousarray(img).tobytes()


def uncertainty_pgm(raster: BevRaster) -> bytes:
    gray = np.where(raster.observed, _to_byte(1.0 - raster.u), 0).astype(np.uint8)
    return pgm(gray)


def confidence_ppm(raster: BevRaster) -> bytes:
    rgb = np.zeros(raster.p_fg.shape + (3,), dtype=np.uint8)
    rgb[..., 1] = np.where(raster.observed, _to_byte(raster.p_fg), 0)
    rgb[..., 2] = np.where(raster.observed, _to_byte(1.0 - raster.p_fg), 0)
    return ppm(rgb)


def observed_pgm(raster: BevRaster) -> bytes:
    return pgm(np.where(raster.observed, 255, 0).astype(np.uint8))


def render_maps(raster: BevRaster) -> Dict[str, bytes]:
    return {
        "uncertainty.pgm": uncertainty_pgm(raster),
        "confidence.ppm": confidence_ppm(raster),
        "observed.pgm": observed_pgm(raster),
    }
