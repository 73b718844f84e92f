"""Label-space projection networks trained with a complete cross-triplet loss
for audio-visual cross-modal retrieval, with the matching evaluation tools."""

from .data import PairedDataset, SynthConfig, load_binary, load_csv, one_hot, save_binary, split, synth_generate
from .evaluation import EvalReport, average_precision, evaluate, map_bidirectional, precision_scope, rank_gallery
from .losses import LossBreakdown, cross_triplet_loss, label_loss, total_loss, triplet_hinge
from .model import DualParams, EncoderConfig, backward, forward, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainHistory, adam_step, sgd_step, train
from .triplets import CombinationSet, TripletPattern, enumerate_triplets, preset

__version__ = "0.1.0"
