"""Few-shot adaptation of frozen vision-language classifiers on cached
features: projection-matrix fine-tuning with an anchor regularizer, the
feature-space baselines, test-time entropy adaptation, and evaluation."""

from .model import FeatureBank, ProjectionHead, TextClassifier, class_logits, predict, project
from .objective import LossBreakdown, ce_loss, frob_reg, grad_total_loss, total_loss
from .trainer import LambdaSchedule, TrainConfig, grid_sweep, resolve_lambda, train
from .ttadapt import TTConfig, confidence_select, tt_adapt_sample, tt_adapt_stream
from .data import SynthConfig, read_fbank, read_proj, read_tcls, sample_few_shot, \
    split_base_new, synth_generate, write_fbank, write_proj, write_tcls
from .evaluation import accuracy, base_new_evaluate, harmonic_mean, total_hm_t1, total_hm_t2

__version__ = "0.1.0"
