"""Import/export of pixel videos as P6 PPM frame directories with a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .codec import PixelVideo

__all__ = ["write_ppm", "read_ppm", "export_video", "import_video"]

_SIDECAR = "video.json"


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Write one (C=3, H, W) frame in [0, 1] as binary P6, maxval 255."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"PPM export needs a (3, H, W) frame, got {frame.shape}")
    h, w = frame.shape[1:]
    rgb = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.transpose(1, 2, 0).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 file back to a (3, H, W) float frame in [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary P6 PPM")
    # header: magic, width, height, maxval; separated by whitespace, # comments allowed
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i : i + 1].isspace():
            i += 1
        fields.append(raw[start:i])
    i += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pix = np.frombuffer(raw, dtype=np.uint8, count=3 * w * h, offset=i)
    if pix.size != 3 * w * h:
        raise ValueError(f"{path}: truncated pixel payload")
    return pix.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def export_video(directory: str | Path, video: PixelVideo) -> None:
    """frame_%04d.ppm per frame plus a {frames, height, width} sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    f, c, h, w = video.shape
    if c != 3:
        raise ValueError("PPM export requires 3 pixel channels")
    for k in range(f):
        write_ppm(directory / f"frame_{k:04d}.ppm", video.frames[k])
    sidecar = {"frames": f, "height": h, "width": w}
    (directory / _SIDECAR).write_text(json.dumps(sidecar, sort_keys=True))


def import_video(directory: str | Path) -> PixelVideo:
    directory = Path(directory)
    meta = json.loads((directory / _SIDECAR).read_text())
    frames = []
    for k in range(int(meta["frames"])):
        frame = read_ppm(directory / f"frame_{k:04d}.ppm")
        if frame.shape != (3, meta["height"], meta["width"]):
            raise ValueError(f"frame {k} does not match sidecar dimensions")
        frames.append(frame)
    return PixelVideo(np.stack(frames))
