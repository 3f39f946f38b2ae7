"""Image and mask files: binary PGM (P5) for 2-D, MetaImage header + raw for 3-D.

Intensities are normalized to [0, 1] by the range of the stored integer type
(255 for 8-bit, 65535 for 16-bit). Masks are stored as 0 / 255 (8-bit); any
nonzero value reads as foreground.
"""

import os

import numpy as np

from .errors import ImageFormatError

IMAGE_SUFFIXES = (".pgm", ".mhd")
MASK_TAG = "_mask"

_MET_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}


def _read_token(fh):
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            break
        if ch == b"#":
            fh.readline()
            if token:
                break
            continue
        if ch.isspace():
            if token:
                break
            continue
        token += ch
    return token


def read_pgm(path):
    """Return the raw integer array of a binary PGM file."""
    with open(path, "rb") as fh:
        if _read_token(fh) != b"P5":
            raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
        try:
            width, height, maxval = (int(_read_token(fh)) for _ in range(3))
        except ValueError:
            raise ImageFormatError(f"{path}: malformed PGM header") from None
        if not 0 < maxval < 65536:
            raise ImageFormatError(f"{path}: maxval {maxval} out of range")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = fh.read(width * height * dtype.itemsize)
    if len(data) != width * height * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=dtype).reshape(height, width).astype(dtype.newbyteorder("="))


def write_pgm(path, array):
    array = np.asarray(array)
    if array.ndim != 2:
        raise ImageFormatError("PGM holds 2-D images only")
    if array.dtype == np.uint8:
        maxval, raw = 255, array.tobytes()
    elif array.dtype == np.uint16:
        maxval, raw = 65535, array.astype(">u2").tobytes()
    else:
        raise ImageFormatError(f"PGM needs uint8 or uint16 data, got {array.dtype}")
    height, width = array.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(raw)


def read_mhd(path):
    """Return the raw integer array of a MetaImage header/raw pair (axes z, y, x)."""
    header = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, value = line.split("=", 1)
                header[key.strip()] = value.strip()
    try:
        ndims = int(header["NDims"])
        size = [int(v) for v in header["DimSize"].split()]
        dtype = _MET_TYPES[header["ElementType"]]
        datafile = header["ElementDataFile"]
    except (KeyError, ValueError) as exc:
        raise ImageFormatError(f"{path}: bad MetaImage header ({exc})") from None
    if len(size) != ndims:
        raise ImageFormatError(f"{path}: DimSize does not match NDims")
    if header.get("ElementByteOrderMSB", "False").lower() == "true":
        dtype = dtype.newbyteorder(">")
    raw_path = os.path.join(os.path.dirname(path), datafile)
    count = int(np.prod(size))
    with open(raw_path, "rb") as fh:
        data = fh.read()
    if len(data) != count * dtype.itemsize:
        raise ImageFormatError(f"{raw_path}: expected {count * dtype.itemsize} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=dtype).reshape(size[::-1]).astype(dtype.newbyteorder("="))


def write_mhd(path, array):
    array = np.asarray(array)
    types = {dt.newbyteorder("="): name for name, dt in _MET_TYPES.items()}
    if array.dtype.newbyteorder("=") not in types:
        raise ImageFormatError(f"MetaImage needs uint8, uint16, float32 or float64 data, got {array.dtype}")
    raw_name = os.path.splitext(os.path.basename(path))[0] + ".raw"
    size = " ".join(str(n) for n in array.shape[::-1])
    header = (
        "ObjectType = Image\n"
        f"NDims = {array.ndim}\n"
        f"DimSize = {size}\n"
        f"ElementType = {types[array.dtype.newbyteorder('=')]}\n"
        "ElementByteOrderMSB = False\n"
        f"ElementDataFile = {raw_name}\n"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
    with open(os.path.join(os.path.dirname(path), raw_name), "wb") as fh:
        fh.write(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes())


def read_raw(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm(path)
    if ext == ".mhd":
        return read_mhd(path)
    raise ImageFormatError(f"{path}: unsupported image type {ext!r}")


def write_raw(path, array):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        write_pgm(path, array)
    elif ext == ".mhd":
        write_mhd(path, array)
    else:
        raise ImageFormatError(f"{path}: unsupported image type {ext!r}")


def load_image(path):
    """Read an image as float64 in [0, 1] (divided by its integer type's maximum)."""
    raw = read_raw(path)
    if raw.dtype.kind == "f":
        raise ImageFormatError(f"{path}: intensity images must hold integer samples")
    return raw.astype(np.float64) / np.iinfo(raw.dtype).max


def load_mask(path):
    return read_raw(path) != 0


def quantize(image, bits=8):
    dtype = np.uint8 if bits == 8 else np.uint16
    top = np.iinfo(dtype).max
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * top).astype(dtype)


def save_image(path, image, bits=8):
    write_raw(path, quantize(image, bits))


def save_mask(path, mask):
    write_raw(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def extension_for(ndim):
    return ".pgm" if ndim == 2 else ".mhd"


def _stems(directory, want_masks):
    found = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in IMAGE_SUFFIXES:
            continue
        is_mask = stem.endswith(MASK_TAG)
        if is_mask != want_masks:
            continue
        key = stem[: -len(MASK_TAG)] if is_mask else stem
        found[key] = os.path.join(directory, name)
    return found


def match_pairs(image_dir, mask_dir=None):
    """Pair ``<stem>.<ext>`` images with ``<stem>_mask.<ext>`` masks.

    Returns a sorted list of ``(stem, image_path, mask_path)``.

    Raises
    ------
    ImageFormatError
        If any image lacks a mask or vice versa; the message names the file.
    """
    mask_dir = mask_dir or image_dir
    images = _stems(image_dir, want_masks=False)
    masks = _stems(mask_dir, want_masks=True)
    for stem in sorted(set(images) - set(masks)):
        raise ImageFormatError(f"no mask for image {images[stem]} (expected {stem}{MASK_TAG}.*)")
    for stem in sorted(set(masks) - set(images)):
        raise ImageFormatError(f"no image for mask {masks[stem]}")
    if not images:
        raise ImageFormatError(f"no images found in {image_dir}")
    return [(stem, images[stem], masks[stem]) for stem in sorted(images)]


def dataset_dirs(root):
    """Image and mask directories of a dataset folder (``images/`` + ``masks/`` or flat)."""
    images = os.path.join(root, "images")
    masks = os.path.join(root, "masks")
    if os.path.isdir(images) and os.path.isdir(masks):
        return images, masks
    return root, root
