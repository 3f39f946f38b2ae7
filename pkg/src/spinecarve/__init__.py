"""Level-set segmentation with nonparametric intensity, context and shape priors."""

from .density import (IntensityKde, SpatialKde, eval_intensity, fit_intensity_kde, fit_spatial_kde,
                      log_ratio_map)
from .errors import *  # noqa: F401,F403
from .evolution import (METHODS, EvolutionConfig, SegmentationResult, baseline_config, data_force, energy,
                        segment_two_stage, shape_energy, shape_force)
from .grid import dice, redistance, signed_distance_transform, threshold
from .harness import ExperimentReport, emit_report, run_loo
from .kernels import BACKEND
from .model import BandwidthConfig, PriorModel, ShapeAtlas, TrainingSet, build_model, load_model, save_model
from .phantoms import PhantomSpec, generate, overlap_coefficient
from .stats import paired_t_test

__version__ = "0.1.0"
