"""Raster file I/O: PFM and the raw LXHD float format for HDR, PNG for LDR and masks."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .image import HdrImage, LdrImage

LXHD_MAGIC = b"LXHD"


def write_lxhd(img: HdrImage, path) -> None:
    """magic(4) + u32 width + u32 height + f32 RGB scanlines, all little-endian."""
    with open(path, "wb") as f:
        f.write(LXHD_MAGIC)
        f.write(struct.pack("<II", img.width, img.height))
        f.write(np.ascontiguousarray(img.data, dtype="<f4").tobytes())


def read_lxhd(path) -> HdrImage:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != LXHD_MAGIC:
            raise ValueError(f"not an LXHD file: bad magic {magic!r}")
        width, height = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(width * height * 12), dtype="<f4")
        if data.size != width * height * 3:
            raise ValueError("LXHD file truncated")
    return HdrImage(width, height, data.copy())


def write_pfm(img: HdrImage, path) -> None:
    """Portable float map, color variant; negative scale marks little-endian."""
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{img.width} {img.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM scanlines run bottom-to-top.
        f.write(np.ascontiguousarray(img.data[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> HdrImage:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"PF":
            raise ValueError(f"not a color PFM file: header {header!r}")
        width, height = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(width * height * 12), dtype=dtype)
        if data.size != width * height * 3:
            raise ValueError("PFM file truncated")
    data = data.reshape(height, width, 3)[::-1]
    return HdrImage(width, height, np.ascontiguousarray(data, dtype=np.float32))


def read_hdr(path) -> HdrImage:
    """Dispatch on extension: .pfm or .lxhd."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return read_pfm(p)
    if p.suffix.lower() == ".lxhd":
        return read_lxhd(p)
    raise ValueError(f"unknown HDR format: {p.suffix}")


def write_hdr(img: HdrImage, path) -> None:
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        write_pfm(img, p)
    elif p.suffix.lower() == ".lxhd":
        write_lxhd(img, p)
    else:
        raise ValueError(f"unknown HDR format: {p.suffix}")


def ldr_to_png_bytes(img: LdrImage, compress_level: int = 6) -> bytes:
    import io

    u8 = np.round(img.data * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def write_png(img: LdrImage, path) -> None:
    with open(path, "wb") as f:
        f.write(ldr_to_png_bytes(img))


def read_png(path) -> LdrImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return LdrImage(arr.shape[1], arr.shape[0], arr)


def write_mask_png(mask: np.ndarray, path) -> None:
    """Binary raster stored as single-channel 8-bit PNG with values 0/255."""
    u8 = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128
