"""Leave-one-out experiments, Dice tables and significance tests.

Every fold trains on all images but one, segments the held-out image with
each method and scores it against its mask. Folds are independent, so they
may run in worker processes; results are always merged in fold order.
"""

import csv
import dataclasses
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import DegenerateSample, SpinecarveError
from .evolution import EvolutionConfig, baseline_config, run_stage1, segment_two_stage, stage1_key
from .imageio import write_pgm
from .model import BandwidthConfig, build_model
from .stats import paired_t_test

logger = logging.getLogger(__name__)

CSV_HEADER = ("image", "method", "dice")


@dataclass
class ExperimentReport:
    """Per-image Dice scores of every method plus summary statistics.

    ``cells`` maps ``(image, method)`` to a Dice score, or ``None`` when that
    segmentation failed. ``stage1_cells`` holds the Dice of the stage-1 curve
    for the same cells.
    """

    image_ids: list
    methods: list
    cells: dict
    stage1_cells: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    config_snapshot: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict, repr=False)

    @property
    def per_image(self):
        return [(img, m, self.cells[img, m]) for img in self.image_ids for m in self.methods]

    def scores(self, method, stage1=False):
        source = self.stage1_cells if stage1 else self.cells
        return [source.get((img, method)) for img in self.image_ids]

    @property
    def per_method_mean(self):
        out = {}
        for m in self.methods:
            vals = [v for v in self.scores(m) if v is not None]
            out[m] = float(np.mean(vals)) if vals else float("nan")
        return out

    def stage1_mean(self, method):
        vals = [v for v in self.scores(method, stage1=True) if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def failed_count(self, method):
        return sum(v is None for v in self.scores(method))

    def test(self, a, b):
        """Paired t-test of method ``a`` against ``b`` on images where both succeeded."""
        pairs = [(x, y) for x, y in zip(self.scores(a), self.scores(b)) if x is not None and y is not None]
        if len(pairs) < 2:
            return None
        try:
            return paired_t_test([p[0] for p in pairs], [p[1] for p in pairs])
        except DegenerateSample:
            return None

    @property
    def pairwise_tests(self):
        """``(a, b) -> TTestResult`` for every pair of methods, in method order."""
        return {(a, b): self.test(a, b) for a, b in itertools.combinations(self.methods, 2)}


def _method_configs(methods, cfg):
    return {m: baseline_config(m, cfg) for m in methods}


def _run_fold(ts, index, methods, cfg, bandwidths, shape_fields, keep_predictions):
    """Train without image ``index`` and segment it with every method."""
    keep = [k for k in range(len(ts)) if k != index]
    image, truth = ts.images[index], ts.masks[index]
    out = {}
    try:
        model = build_model(ts.subset(keep), bandwidths, shape_fields[keep])
    except SpinecarveError as exc:
        logger.error("fold %s: training failed: %s", ts.ids[index], exc)
        return {m: (None, None, None, str(exc)) for m in methods}
    stage1_cache = {}
    for m, mcfg in _method_configs(methods, cfg).items():
        try:
            key = stage1_key(mcfg)
            if key not in stage1_cache:
                stage1_cache[key] = run_stage1(image, model, mcfg)
            result = segment_two_stage(image, model, mcfg, stage1=stage1_cache[key], ground_truth=truth)
            first = grid.dice(result.stage1_mask, truth)
            out[m] = (result.dice, first, result.mask if keep_predictions else None, None)
        except (SpinecarveError, ArithmeticError) as exc:
            logger.error("fold %s, method %s failed: %s", ts.ids[index], m, exc)
            out[m] = (None, None, None, str(exc))
    return out


def _resolve_workers(threads):
    threads = int(threads)
    if threads < 0:
        raise ValueError("threads must be non-negative")
    return threads or (os.cpu_count() or 1)


def run_loo(ts, methods, cfg=None, bandwidths=None, threads=1, keep_predictions=False):
    """Leave-one-out evaluation of ``methods`` on a training set.

    Parameters
    ----------
    ts : TrainingSet
        At least three image/mask pairs.
    methods : list of str
        Method names accepted by :func:`baseline_config`.
    cfg : EvolutionConfig, optional
        Base configuration each method is derived from.
    bandwidths : BandwidthConfig, optional
    threads : int
        Worker processes for folds; 0 uses every CPU. Results do not depend
        on this value.
    keep_predictions : bool
        Keep predicted masks in the report (needed for overlays).

    Returns
    -------
    ExperimentReport
    """
    if len(ts) < 3:
        raise ValueError("leave-one-out needs at least three images")
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise ValueError("no methods given")
    cfg = cfg or EvolutionConfig()
    bandwidths = bandwidths or BandwidthConfig()
    _method_configs(methods, cfg)
    shape_fields = np.stack([grid.signed_distance_transform(m) for m in ts.masks])
    workers = min(_resolve_workers(threads), len(ts))
    args = [(ts, i, methods, cfg, bandwidths, shape_fields, keep_predictions) for i in range(len(ts))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, *zip(*args)))
    else:
        results = [_run_fold(*a) for a in args]
    report = ExperimentReport(list(ts.ids), methods, {}, config_snapshot=snapshot(methods, cfg, bandwidths))
    for img, fold in zip(ts.ids, results):
        for m in methods:
            score, first, mask, error = fold[m]
            report.cells[img, m] = score
            report.stage1_cells[img, m] = first
            if error is not None:
                report.failures[img, m] = error
            if mask is not None:
                report.predictions[img, m] = mask
    return report


def snapshot(methods, cfg, bandwidths):
    return {
        "methods": list(methods),
        "evolution": dataclasses.asdict(cfg),
        "method_configs": {m: dataclasses.asdict(c) for m, c in _method_configs(methods, cfg).items()},
        "bandwidths": dataclasses.asdict(bandwidths),
    }


def format_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for img, m, score in report.per_image:
        writer.writerow([img, m, "" if score is None else f"{score:.6f}"])
    return buf.getvalue()


def read_csv(path):
    """Parse a Dice CSV into ``{(image, method): dice or None}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    return {(r[0], r[1]): (float(r[2]) if r[2] else None) for r in rows[1:]}


def format_table(report, reference=None):
    """Plain-text table of mean Dice per method with tests against ``reference``.

    A ``*`` marks methods whose difference from the reference is significant
    at the 5% level.
    """
    reference = reference or report.methods[0]
    means = report.per_method_mean
    width = max(len(m) for m in report.methods) + 2
    lines = [f"{'method':<{width}}{'mean_dice':>10}{'stage1':>10}{'n':>5}{'failed':>8}"
             f"{'t_vs_ref':>10}{'p_vs_ref':>12}  sig"]
    for m in report.methods:
        n = len(report.image_ids) - report.failed_count(m)
        t_col, p_col, mark = "-", "-", ""
        if m != reference:
            res = report.test(reference, m)
            if res is not None:
                t_col, p_col, mark = f"{res.t:.4f}", f"{res.p:.3e}", "*" if res.significant else ""
        lines.append(f"{m:<{width}}{means[m]:>10.4f}{report.stage1_mean(m):>10.4f}{n:>5}"
                     f"{report.failed_count(m):>8}{t_col:>10}{p_col:>12}  {mark}".rstrip())
    lines.append("")
    lines.append(f"reference method: {reference}; * = paired two-sided t-test p < 0.05")
    lines.append("")
    lines.append("all pairwise tests (a vs b: t, p)")
    for (a, b), res in report.pairwise_tests.items():
        body = "undefined" if res is None else f"t={res.t:.4f} p={res.p:.3e}{' *' if res.significant else ''}"
        lines.append(f"  {a} vs {b}: {body}")
    return "\n".join(lines) + "\n"


def _gray(image):
    return np.round(64 + 128 * np.clip(image, 0.0, 1.0)).astype(np.uint8)


def overlay(image, truth, predicted):
    """8-bit rendering: ground-truth contour white, predicted contour black."""
    out = _gray(image)
    out[grid.boundary(truth)] = 255
    out[grid.boundary(predicted)] = 0
    return out


def _slices(volume):
    if volume.ndim == 2:
        return {"": volume}
    return {f"_{name}": np.take(volume, volume.shape[ax] // 2, axis=ax) for ax, name in enumerate("zyx")}


def emit_report(report, out_dir, ts=None):
    """Write ``dice.csv``, ``summary.txt``, ``config.json`` and, with ``ts``, overlays.

    Overlays are written for every kept prediction as
    ``overlays/<image>_<method>[_<axis>].pgm``; 3-D volumes give one central
    slice per axis.
    """
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "dice.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(report))
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_table(report))
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(report.config_snapshot, indent=2, sort_keys=True) + "\n")
    if ts is None or not report.predictions:
        return
    odir = os.path.join(out_dir, "overlays")
    os.makedirs(odir, exist_ok=True)
    lookup = {img: k for k, img in enumerate(ts.ids)}
    for (img, m), pred in report.predictions.items():
        k = lookup[img]
        rendered = overlay(ts.images[k], ts.masks[k], pred)
        tag = m.replace("+", "_")
        for suffix, plane in _slices(rendered).items():
            write_pgm(os.path.join(odir, f"{img}_{tag}{suffix}.pgm"), np.ascontiguousarray(plane))
