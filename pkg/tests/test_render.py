import numpy as np

from app.models.grid import BevRaster, GridSpec
from app.services.render import confidence_ppm, observed_pgm, render_maps, uncertainty_pgm

SPEC = GridSpec(origin_x=0.0, origin_y=0.0, resolution=1.0, width=3, height=2)
HEADER_PGM = b"P5\n3 2\n255\n"
HEADER_PPM = b"P6\n3 2\n255\n"


def raster() -> BevRaster:
    # row 0 is y in [0, 1), the bottom of the image
    p_fg = np.array([[1.0, 0.0, 0.5], [0.5, 0.5, 0.5]])
    u = np.array([[0.0, 0.0, 1.0], [0.5, 1.0, 1.0]])
    observed = np.array([[True, True, True], [True, False, False]])
    return BevRaster(spec=SPEC, p_fg=p_fg, u=u, observed=observed)


def test_uncertainty_image():
    data = uncertainty_pgm(raster())
    assert data.startswith(HEADER_PGM)
    pixels = np.frombuffer(data[len(HEADER_PGM):], dtype=np.uint8).reshape(2, 3)
    # top image row is the highest y
    np.testing.assert_array_equal(pixels, [[128, 0, 0], [255, 255, 0]])


def test_confidence_image():
    data = confidence_ppm(raster())
    assert data.startswith(HEADER_PPM)
    pixels = np.frombuffer(data[len(HEADER_PPM):], dtype=np.uint8).reshape(2, 3, 3)
    np.testing.assert_array_equal(pixels[1, 0], [0, 255, 0])
    np.testing.assert_array_equal(pixels[1, 1], [0, 0, 255])
    np.testing.assert_array_equal(pixels[0, 1], [0, 0, 0])
    np.testing.assert_array_equal(pixels[0, 0], [0, 128, 128])


def test_observed_image_and_bundle():
    data = observed_pgm(raster())
    pixels = np.frombuffer(data[len(HEADER_PGM):], dtype=np.uint8).reshape(2, 3)
    np.testing.assert_array_equal(pixels, [[255, 0, 0], [255, 255, 255]])
    assert sorted(render_maps(raster())) == ["confidence.ppm", "observed.pgm", "uncertainty.pgm"]
