"""Training-set ingestion, the prior model and its on-disk archive."""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .density import (
    DEFAULT_SPATIAL_BANDWIDTH,
    IntensityKde,
    SpatialKde,
    fit_intensity_kde,
    multiset,
    spatial_kde_from_counts,
)
from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    EmptyAtlas,
    FormatVersionMismatch,
    InconsistentDims,
    NonPositiveBandwidth,
)
from .kernels import atlas_sqdist

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"SPCVMODL"


@dataclass
class TrainingSet:
    """Aligned images (float, [0, 1]) and their manual masks."""

    images: list
    masks: list
    ids: list = None

    def __post_init__(self):
        if len(self.images) != len(self.masks):
            raise InconsistentDims("images and masks differ in count")
        if not self.images:
            raise InconsistentDims("training set is empty")
        self.images = [grid.check_field(im, "image") for im in self.images]
        self.masks = [grid.check_mask(m) for m in self.masks]
        shapes = {im.shape for im in self.images} | {m.shape for m in self.masks}
        if len(shapes) != 1:
            raise InconsistentDims(f"training pairs disagree on dims: {sorted(shapes)}")
        for k, m in enumerate(self.masks):
            if not m.any() or m.all():
                raise InconsistentDims(f"mask {k} must contain both labels")
        if self.ids is None:
            self.ids = [f"{k:03d}" for k in range(len(self.images))]

    @property
    def dims(self):
        return self.images[0].shape

    def __len__(self):
        return len(self.images)

    def subset(self, keep):
        keep = list(keep)
        return TrainingSet([self.images[k] for k in keep], [self.masks[k] for k in keep],
                           [self.ids[k] for k in keep])


@dataclass(frozen=True, eq=False)
class ShapeAtlas:
    """Signed-distance fields of the training shapes and the Parzen bandwidth."""

    fields: np.ndarray
    bandwidth: float

    def __post_init__(self):
        if self.fields.shape[0] == 0:
            raise EmptyAtlas("shape atlas is empty")
        if not self.bandwidth > 0:
            raise NonPositiveBandwidth(f"shape bandwidth must be positive, got {self.bandwidth}")

    @property
    def dims(self):
        return self.fields.shape[1:]

    def __len__(self):
        return self.fields.shape[0]

    @property
    def flat(self):
        return self.fields.reshape(len(self), -1)

    def __eq__(self, other):
        if not isinstance(other, ShapeAtlas):
            return NotImplemented
        return self.bandwidth == other.bandwidth and np.array_equal(self.fields, other.fields)


def shape_bandwidth(fields):
    """Mean over atlas fields of the L2 distance to the nearest other field.

    A single field has no neighbour; one voxel of RMS disagreement,
    ``sqrt(n_voxels)``, is used instead.
    """
    flat = np.ascontiguousarray(np.asarray(fields, dtype=np.float64).reshape(len(fields), -1))
    if len(flat) < 2:
        return float(np.sqrt(flat.shape[1]))
    nearest = []
    for i in range(len(flat)):
        d = atlas_sqdist(flat[i], flat)
        d[i] = np.inf
        nearest.append(np.sqrt(d.min()))
    value = float(np.mean(nearest))
    if value <= 0:
        # all training shapes identical
        value = float(np.sqrt(flat.shape[1]))
    return value


@dataclass(frozen=True)
class BandwidthConfig:
    intensity: object = "auto"
    spatial: object = DEFAULT_SPATIAL_BANDWIDTH
    shape: object = "auto"
    location_stride: int = 1


@dataclass(frozen=True, eq=False)
class PriorModel:
    intensity_fg: IntensityKde
    intensity_bg: IntensityKde
    context_fg: SpatialKde
    context_bg: SpatialKde
    shapes: ShapeAtlas
    format_version: int = FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    @property
    def dims(self):
        return self.context_fg.dims

    def __eq__(self, other):
        if not isinstance(other, PriorModel):
            return NotImplemented
        return (self.intensity_fg == other.intensity_fg and self.intensity_bg == other.intensity_bg
                and self.context_fg == other.context_fg and self.context_bg == other.context_bg
                and self.shapes == other.shapes and self.format_version == other.format_version)


def location_counts(masks, stride=1):
    """Per-voxel counts of foreground and background labels across masks."""
    masks = np.asarray(masks, dtype=bool)
    fg = masks.sum(axis=0).astype(np.float64)
    bg = (~masks).sum(axis=0).astype(np.float64)
    if stride > 1:
        keep = np.ones(fg.shape, dtype=bool)
        for axis, n in enumerate(fg.shape):
            shape = [1] * fg.ndim
            shape[axis] = n
            keep &= (np.arange(n) % stride == 0).reshape(shape)
        fg = np.where(keep, fg, 0.0)
        bg = np.where(keep, bg, 0.0)
    return fg, bg


def build_model(ts, config=None, shape_fields=None):
    """Build every prior from a training set.

    Parameters
    ----------
    ts : TrainingSet
    config : BandwidthConfig, optional
    shape_fields : ndarray, optional
        Precomputed signed-distance fields of ``ts.masks`` (saves recomputing
        them when many models share training shapes).

    Returns
    -------
    PriorModel
    """
    config = config or BandwidthConfig()
    images = np.stack(ts.images)
    masks = np.stack(ts.masks)
    fg_values, fg_counts = multiset(images[masks])
    bg_values, bg_counts = multiset(images[~masks])
    intensity_fg = fit_intensity_kde(fg_values, config.intensity, counts=fg_counts)
    intensity_bg = fit_intensity_kde(bg_values, config.intensity, counts=bg_counts)
    fg_loc, bg_loc = location_counts(masks, config.location_stride)
    context_fg = spatial_kde_from_counts(fg_loc, config.spatial)
    context_bg = spatial_kde_from_counts(bg_loc, config.spatial)
    if shape_fields is None:
        shape_fields = np.stack([grid.signed_distance_transform(m) for m in ts.masks])
    else:
        shape_fields = np.asarray(shape_fields, dtype=np.float64)
        if shape_fields.shape != masks.shape:
            raise DimensionMismatch("precomputed shape fields do not match the training masks")
    sigma = config.shape
    if isinstance(sigma, str):
        if sigma != "auto":
            raise ValueError(f"unknown bandwidth rule {sigma!r}")
        sigma = shape_bandwidth(shape_fields)
    atlas = ShapeAtlas(np.ascontiguousarray(shape_fields), float(sigma))
    return PriorModel(intensity_fg, intensity_bg, context_fg, context_bg, atlas)


def _arrays(model):
    return {
        "intensity_fg.values": model.intensity_fg.values,
        "intensity_fg.counts": model.intensity_fg.counts,
        "intensity_fg.table": model.intensity_fg.table,
        "intensity_bg.values": model.intensity_bg.values,
        "intensity_bg.counts": model.intensity_bg.counts,
        "intensity_bg.table": model.intensity_bg.table,
        "context_fg.counts": model.context_fg.counts,
        "context_fg.map": model.context_fg.map,
        "context_bg.counts": model.context_bg.counts,
        "context_bg.map": model.context_bg.map,
        "shapes.fields": model.shapes.fields,
    }


def save_model(model, path):
    """Write a model archive.

    Layout: 8-byte magic ``SPCVMODL``, little-endian uint64 manifest length,
    UTF-8 JSON manifest, then the raw little-endian float64 arrays back to
    back in manifest order. The manifest lists each array's shape, byte
    offset within the payload and SHA-256.
    """
    entries = []
    payload = []
    offset = 0
    for name, arr in _arrays(model).items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
        payload.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": model.format_version,
        "dims": list(model.dims),
        "bandwidths": {
            "intensity_fg": model.intensity_fg.bandwidth,
            "intensity_bg": model.intensity_bg.bandwidth,
            "context_fg": model.context_fg.bandwidth,
            "context_bg": model.context_bg.bandwidth,
            "shape": model.shapes.bandwidth,
        },
        "counts": {
            "I_fg": model.intensity_fg.n_samples,
            "I_bg": model.intensity_bg.n_samples,
            "L_fg": model.context_fg.n_samples,
            "L_bg": model.context_bg.n_samples,
            "atlas": len(model.shapes),
        },
        "arrays": entries,
    }
    header = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def read_manifest(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return _parse(blob)[0]


def _parse(blob):
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ChecksumMismatch("not a model archive or truncated header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + hlen:
        raise ChecksumMismatch("model archive truncated inside the manifest")
    try:
        manifest = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumMismatch(f"corrupt manifest: {exc}") from None
    return manifest, blob[16 + hlen:]


def load_model(path):
    """Read a model archive written by :func:`save_model`.

    Raises
    ------
    FormatVersionMismatch
        The archive was written by a newer (or unknown) format.
    ChecksumMismatch
        The file is truncated or an array fails its SHA-256 check.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    manifest, payload = _parse(blob)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"archive format {version}, this build reads {FORMAT_VERSION}")
    arrays = {}
    for entry in manifest["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"] or hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise ChecksumMismatch(f"array {entry['name']} failed its checksum")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    bw = manifest["bandwidths"]
    return PriorModel(
        IntensityKde(arrays["intensity_fg.values"], arrays["intensity_fg.counts"],
                     bw["intensity_fg"], arrays["intensity_fg.table"]),
        IntensityKde(arrays["intensity_bg.values"], arrays["intensity_bg.counts"],
                     bw["intensity_bg"], arrays["intensity_bg.table"]),
        SpatialKde(arrays["context_fg.counts"], bw["context_fg"], arrays["context_fg.map"]),
        SpatialKde(arrays["context_bg.counts"], bw["context_bg"], arrays["context_bg.map"]),
        ShapeAtlas(arrays["shapes.fields"], bw["shape"]),
        format_version=version,
    )


@dataclass
class AlignmentReport:
    centroids: list
    max_distance: float
    threshold: float
    warnings: list

    @property
    def ok(self):
        return not self.warnings


def align_check(ts, threshold=None):
    """Report foreground centroids and flag training sets that look unaligned.

    ``threshold`` defaults to 10% of the grid diagonal.
    """
    dims = np.array(ts.dims, dtype=np.float64)
    if threshold is None:
        threshold = 0.1 * float(np.sqrt(((dims - 1) ** 2).sum()))
    centroids = [np.argwhere(m).mean(axis=0) for m in ts.masks]
    c = np.array(centroids)
    dist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1))
    max_distance = float(dist.max()) if len(c) > 1 else 0.0
    warnings = []
    if max_distance > threshold:
        i, j = np.unravel_index(np.argmax(dist), dist.shape)
        warnings.append(f"centroids of {ts.ids[i]} and {ts.ids[j]} are {max_distance:.2f} voxels apart "
                        f"(threshold {threshold:.2f}); training images may not be aligned")
        for w in warnings:
            logger.warning(w)
    return AlignmentReport([tuple(map(float, x)) for x in centroids], max_distance, float(threshold), warnings)
