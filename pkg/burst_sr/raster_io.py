"""Raster and burst file formats.

A raster is stored as a flat little-endian float32 payload (``*.f32``) next
to a JSON sidecar (``*.json``) holding ``height``, ``width``, ``channels``
and an optional ``pixel_size_m``. A burst directory holds one raster per
frame and per true flow, the HR truth when known, and ``burst.json``
listing the frame files with the reference first.

PNG/PGM export is for viewing only; those files are never read back.
"""
import json
import os
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from PIL import Image

from burst_sr.errors import InvalidArgumentError
from burst_sr.imaging import Burst, as_raster

PAYLOAD_DTYPE = np.dtype('<f4')


@dataclass
class RasterHeader:
    """Sidecar metadata of a stored raster."""
    height: int
    width: int
    channels: int
    pixel_size_m: Optional[float] = None

    def binned(self, factor):
        """Header of the raster after block binning by ``factor``."""
        if self.height % factor or self.width % factor:
            raise InvalidArgumentError(f"{self.height}×{self.width} grid is not divisible by {factor}")
        size = self.pixel_size_m * factor if self.pixel_size_m is not None else None
        return RasterHeader(self.height // factor, self.width // factor, self.channels, size)

    def super_resolved(self, s):
        """Header of the raster on an s× finer grid."""
        size = self.pixel_size_m / s if self.pixel_size_m is not None else None
        return RasterHeader(self.height * s, self.width * s, self.channels, size)


def _sidecar_path(path):
    return os.path.splitext(path)[0] + '.json'


def write_json_atomic(path, payload):
    """Write JSON via a temp file and rename so readers never see partial files."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    os.replace(tmp_path, path)


def write_raster(path, image, pixel_size_m=None):
    """Write ``image`` as float32 payload plus JSON sidecar. Returns the header."""
    data = as_raster(image)
    header = RasterHeader(*data.shape, pixel_size_m=pixel_size_m)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(data.astype(PAYLOAD_DTYPE).tobytes(order='C'))
    write_json_atomic(_sidecar_path(path), asdict(header))
    return header


def read_header(path):
    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"Raster sidecar not found: {sidecar}")
    with open(sidecar, 'r') as f:
        meta = json.load(f)
    try:
        return RasterHeader(int(meta['height']), int(meta['width']), int(meta['channels']),
                            meta.get('pixel_size_m'))
    except KeyError as e:
        raise InvalidArgumentError(f"Sidecar {sidecar} is missing field {e}") from e


def read_raster(path):
    """Read a raster written by :func:`write_raster` as float64 (H, W, C)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Raster file not found: {path}")
    header = read_header(path)
    payload = np.fromfile(path, dtype=PAYLOAD_DTYPE)
    expected = header.height * header.width * header.channels
    if payload.size != expected:
        raise InvalidArgumentError(f"Raster {path} holds {payload.size} samples, header says {expected}")
    return payload.reshape(header.height, header.width, header.channels).astype(np.float64)


def export_png(path, image, bits=8):
    """Min-max stretch to 8 or 16 bits and save (PNG, or PGM by extension)."""
    data = as_raster(image).mean(axis=2)
    lo, hi = float(data.min()), float(data.max())
    scaled = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    if bits == 8:
        img = Image.fromarray(np.round(scaled * 255).astype(np.uint8))
    elif bits == 16:
        img = Image.fromarray(np.round(scaled * 65535).astype(np.uint16))
    else:
        raise InvalidArgumentError(f"PNG export supports 8 or 16 bits, got {bits}")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    img.save(path)
    return path


def write_burst(directory, burst, s, pixel_size_m=None, meta=None):
    """Store a burst as frame/flow/truth rasters plus ``burst.json``.

    ``meta`` holds acquisition facts (PSF width, decimation) that
    reconstruction needs and the frames cannot carry.
    """
    os.makedirs(directory, exist_ok=True)
    frame_files = []
    for k, frame in enumerate(burst.frames):
        name = f"frame_{k:03d}.f32"
        write_raster(os.path.join(directory, name), frame, pixel_size_m)
        frame_files.append(name)

    flow_files = None
    if burst.true_flows is not None:
        flow_files = []
        for k, flow in enumerate(burst.true_flows):
            name = f"flow_{k:03d}.f32"
            write_raster(os.path.join(directory, name), flow)
            flow_files.append(name)

    truth_file = None
    if burst.hr_truth is not None:
        truth_file = 'hr_truth.f32'
        hr_size = pixel_size_m / s if pixel_size_m is not None else None
        write_raster(os.path.join(directory, truth_file), burst.hr_truth, hr_size)

    index = {'frames': frame_files, 'flows': flow_files, 'hr_truth': truth_file,
             'reference': frame_files[0], 's': int(s), 'pixel_size_m': pixel_size_m,
             'meta': dict(meta or {})}
    write_json_atomic(os.path.join(directory, 'burst.json'), index)
    return index


def read_burst(directory):
    """Load a burst directory. Returns ``(burst, index)``.

    Frames are ordered with the reference named in ``burst.json`` first and
    the remaining frames in listing order.
    """
    index_path = os.path.join(directory, 'burst.json')
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"Burst index not found: {index_path}")
    with open(index_path, 'r') as f:
        index = json.load(f)

    frame_files = list(index['frames'])
    flow_files = index.get('flows')
    reference = index.get('reference', frame_files[0])
    if reference not in frame_files:
        raise InvalidArgumentError(f"Reference frame {reference} is not listed in {index_path}")
    ref_pos = frame_files.index(reference)
    order = [ref_pos] + [k for k in range(len(frame_files)) if k != ref_pos]

    frames = [read_raster(os.path.join(directory, frame_files[k])) for k in order]
    flows = None
    if flow_files:
        flows = [read_raster(os.path.join(directory, flow_files[k])) for k in order]
    truth = None
    if index.get('hr_truth'):
        truth = read_raster(os.path.join(directory, index['hr_truth']))
    return Burst(frames=frames, true_flows=flows, hr_truth=truth), index
