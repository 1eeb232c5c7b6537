"""Continual hyperspectral anomaly detection with a replay-regularised GAN."""

__version__ = "0.1.0"

from .bsm import BackgroundSet, select_background, ssns_all
from .errors import (ArgumentError, ClhadError, ConfigError, DataError, DivergenceError, FormatError,
                     IntegrityError, MetricError, SelectionError, ShapeError, SimilarityError)
from .evalmetrics import AnomalyMap, AucMatrix, RocTriplet, anomaly_map, auc_bs, continual_metrics, roc_triplet
from .hsi_io import GroundTruthMask, HsiCube, SceneSpec, load_cube, load_mask, save_cube, save_mask, synth_scene
from .losses import LossBreakdown, LossWeights
from .model import DiscriminatorConfig, GeneratorConfig, ModelState
from .replay import ReplayBuffer, kmeans, select_exemplars, update_buffer
from .trainer import CheckpointSet, TaskStream, TrainConfig, train, train_continual, train_fine_tune, train_joint
