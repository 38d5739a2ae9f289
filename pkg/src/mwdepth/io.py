"""Readers and writers: PFM float maps, PNG images/labels/masks, JSON, CSV.

Every writer is deterministic: the same input produces the same bytes.
"""
from __future__ import annotations

import csv
import json
import math
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------- PFM

_PFM_HEADER = re.compile(rb"(P[Ff])\s(\d+)\s(\d+)\s([-+0-9.eE]+)\s")


def write_pfm(path, data: np.ndarray) -> None:
    """Write an H x W or H x W x 3 float map; little-endian, rows bottom to top."""
    a = np.asarray(data)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds H x W or H x W x 3 data, got shape {a.shape}")
    H, W = a.shape[:2]
    payload = np.ascontiguousarray(a[::-1].astype("<f4")).tobytes()
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{W} {H}\n".encode() + b"-1.0\n" + payload)


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    return parse_pfm(raw)


def parse_pfm(raw: bytes) -> np.ndarray:
    m = _PFM_HEADER.match(raw)
    if m is None:
        # locate the first offending byte for the message
        bad = 0 if not raw.startswith(b"P") else (1 if raw[1:2] not in (b"F", b"f") else 2)
        raise FormatError("malformed PFM header", bad)
    tag, W, H, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if scale == 0:
        raise FormatError("PFM scale must be nonzero", m.start(4))
    channels = 3 if tag == b"PF" else 1
    start = m.end()
    need = W * H * channels * 4
    end = start + need
    if len(raw) < end:
        raise FormatError(f"truncated PFM payload: {need} bytes expected from offset {start}, "
                          f"first missing byte", len(raw))
    dtype = "<f4" if scale < 0 else ">f4"
    a = np.frombuffer(raw, dtype=dtype, count=W * H * channels, offset=start)
    a = a.reshape((H, W, channels) if channels == 3 else (H, W))[::-1]
    return a.astype(np.float32)


# ---------------------------------------------------------------- PNG

def _save_png(img: Image.Image, path) -> None:
    img.save(path, format="PNG", optimize=False, compress_level=6)


def write_rgb_png(path, image: np.ndarray) -> None:
    """Float [0, 1] or uint8 H x W x 3 image to 8-bit RGB."""
    a = np.asarray(image)
    if a.dtype != np.uint8:
        a = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    _save_png(Image.fromarray(a), path)


def read_rgb_png(path, as_float: bool = True) -> np.ndarray:
    with Image.open(path) as im:
        a = np.array(im.convert("RGB"))
    return a.astype(np.float64) / 255.0 if as_float else a


def write_label_png(path, labels: np.ndarray) -> None:
    a = np.asarray(labels)
    if a.min(initial=0) < 0 or a.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    _save_png(Image.fromarray(a.astype("<u2")), path)


def read_label_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I", "L"):
            raise FormatError(f"expected a 16-bit grey PNG, got mode {im.mode}")
        return np.array(im).astype(np.uint16)


def write_mask_png(path, mask: np.ndarray) -> None:
    _save_png(Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)), path)


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("L")) > 127


# ---------------------------------------------------------------- JSON / CSV

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if not any(c in s for c in ".eEn"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    elif isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.generic)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON in {path}: {e.msg}", e.pos) from None


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0])
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt_float(v) if isinstance(v, float) else v for v in (r[k] for k in fields)])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(f)]


def _parse_cell(v: str):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
