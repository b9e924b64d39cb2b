"""File formats: particles, transfer functions, cameras and images."""

from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path

import numpy as np

from .quantize import Particle
from .raycast import Camera, TransferFunction

PARTICLE_MAGIC = b"SPRT"
PARTICLE_FIELDS = ("x", "y", "z", "mass", "density", "h", "value")
_COUNT = struct.Struct("<4sQ")


def read_particles(path):
    """Particles from CSV (header ``x,y,z,mass,density,h,value``) or from the
    binary layout (magic ``SPRT``, u64 count, 7 little-endian f64 per
    particle)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == PARTICLE_MAGIC:
        _, n = _COUNT.unpack_from(data)
        rec = np.frombuffer(data, dtype="<f8", offset=_COUNT.size)
        if rec.size != 7 * n:
            raise ValueError(f"{path}: expected {n} records, found {rec.size / 7:g}")
        rows = rec.reshape(n, 7)
    else:
        reader = csv.DictReader(data.decode().splitlines())
        if reader.fieldnames is None:
            return []
        missing = set(PARTICLE_FIELDS) - {f.strip() for f in reader.fieldnames}
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = np.array(
            [[float(r[f]) for f in PARTICLE_FIELDS] for r in ({k.strip(): v for k, v in row.items()} for row in reader)]
        ).reshape(-1, 7)
    return [Particle(r[:3], r[3], r[4], r[5], r[6]) for r in rows]


def _rows(particles):
    return np.array([[*p.position, p.mass, p.density, p.h, p.value] for p in particles], dtype="<f8").reshape(-1, 7)


def write_particles_csv(particles, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PARTICLE_FIELDS)
        for r in _rows(particles):
            w.writerow([repr(float(v)) for v in r])


def write_particles_binary(particles, path):
    rows = _rows(particles)
    Path(path).write_bytes(_COUNT.pack(PARTICLE_MAGIC, len(rows)) + rows.tobytes())


def read_transfer_function(path):
    """CSV rows ``value,r,g,b,absorption``; a header line is optional."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
                continue
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return TransferFunction(arr[:, 0], arr[:, 1:4], arr[:, 4])


def write_transfer_function(tf, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "r", "g", "b", "absorption"])
        for v, rgb, a in zip(tf.values, tf.rgb, tf.absorption):
            w.writerow([v, *rgb, a])


def read_camera(spec):
    """Camera from a JSON file path, a JSON string or a dict."""
    if isinstance(spec, Camera):
        return spec
    if isinstance(spec, dict):
        return Camera.from_dict(spec)
    text = str(spec)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    return Camera.from_dict(json.loads(text))


def to_uint8(image):
    return (np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(image, path):
    """Binary PPM (P6) from a float image in ``[0, 1]``."""
    img = to_uint8(image)
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    # Exactly one whitespace byte follows maxval; the pixels may start with
    # whitespace values, so a plain split would eat them.
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def write_png(image, path):
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def write_image(image, path):
    """PPM by default; PNG when the suffix asks for it (needs Pillow)."""
    if Path(path).suffix.lower() == ".png":
        write_png(image, path)
    else:
        write_ppm(image, path)
