"""Cut transformer for ranked list truncation."""

from .data import Dataset, RankedList, SynthConfig, build_dataset, split_train_test, synth_generate
from .metrics import dcg_vector, f1_vector, oracle_cutoff, precision_vector
from .model import CutDistribution, ModelConfig, forward, init_params, predict_cutoff
from .train import TrainConfig, expected_metric_loss, train

__version__ = "0.1.0"
