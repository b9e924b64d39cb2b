import json

import numpy as np
import pytest

from sphpoly import io
from sphpoly.quantize import Particle
from sphpoly.raycast import Camera, TransferFunction


def _particles(rng, n=5):
    return [Particle(rng.normal(size=3), *rng.uniform(0.1, 2, 4)) for _ in range(n)]


def _same(a, b):
    return len(a) == len(b) and all(
        np.array_equal(p.position, q.position) and (p.mass, p.density, p.h, p.value) == (q.mass, q.density, q.h, q.value)
        for p, q in zip(a, b)
    )


def test_particles_csv_and_binary_round_trip(tmp_path, rng):
    ps = _particles(rng)
    io.write_particles_csv(ps, tmp_path / "p.csv")
    io.write_particles_binary(ps, tmp_path / "p.bin")
    assert _same(io.read_particles(tmp_path / "p.csv"), ps)
    assert _same(io.read_particles(tmp_path / "p.bin"), ps)
    assert (tmp_path / "p.bin").read_bytes()[:4] == b"SPRT"


def test_particles_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("x,y,z,mass\n1,2,3,4\n")
    with pytest.raises(ValueError):
        io.read_particles(tmp_path / "bad.csv")
    (tmp_path / "cut.bin").write_bytes(b"SPRT" + (3).to_bytes(8, "little") + bytes(8 * 7))
    with pytest.raises(ValueError):
        io.read_particles(tmp_path / "cut.bin")
    (tmp_path / "empty.csv").write_text("x,y,z,mass,density,h,value\n")
    assert io.read_particles(tmp_path / "empty.csv") == []


def test_transfer_function_round_trip(tmp_path):
    tf = TransferFunction([0.0, 0.5, 2.0], [[0, 0, 0], [1, 0.5, 0], [1, 1, 1]], [0.0, 0.3, 2.0])
    io.write_transfer_function(tf, tmp_path / "tf.csv")
    again = io.read_transfer_function(tmp_path / "tf.csv")
    assert np.array_equal(again.values, tf.values) and np.array_equal(again.rgb, tf.rgb)
    assert np.array_equal(again.absorption, tf.absorption)


def test_camera_sources(tmp_path):
    cam = Camera(mode="pinhole", width=3, height=2, fov=30.0)
    (tmp_path / "c.json").write_text(json.dumps(cam.to_dict()))
    assert io.read_camera(tmp_path / "c.json") == cam
    assert io.read_camera(json.dumps(cam.to_dict())) == cam
    with pytest.raises(ValueError):
        io.read_camera({"zoom": 2})


def test_ppm_round_trip_with_whitespace_bytes(tmp_path):
    img = np.zeros((3, 4, 3))
    img[0, 0] = [10 / 255, 32 / 255, 9 / 255]
    img[2, 3] = [1.0, 0.5, 13 / 255]
    io.write_image(img, tmp_path / "a.ppm")
    back = io.read_ppm(tmp_path / "a.ppm")
    assert back.shape == (3, 4, 3)
    assert np.array_equal(back, io.to_uint8(img))
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n4 3\n255\n")
