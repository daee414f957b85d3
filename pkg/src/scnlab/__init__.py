"""Landmark localisation with a two-part heatmap network on synthetic data.

Modules:
    tensor      numpy autodiff (conv, pooling, upsampling, MSE) and a gradient checker
    heatmap     Gaussian target maps and argmax decoding
    model       the two-component network and an encoder-decoder baseline
    synth       seeded synthetic images, PGM/CSV/manifest I/O
    training    momentum SGD and checkpoint files
    evaluation  point-to-point errors, CED curves, the reduced-data experiment
    cli         ``scnlab`` command line
"""

from .errors import CheckpointError, ConfigError, FormatError, InvalidInputError, ScnError
from .heatmap import HeatmapConfig, extract_landmarks, gaussian_heatmap, target_stack
from .model import NetConfig, build, build_baseline, build_scn, forward, predict, scn_forward
from .synth import GenConfig, Sample, generate_dataset, generate_sample, generate_samples, load_dataset
from .training import Checkpoint, Hyperparams, load_checkpoint, save_checkpoint, train
from .evaluation import (ExperimentSpec, cumulative_error_distribution, evaluate,
                         point_to_point_error, run_experiment)

__version__ = "0.1.0"
