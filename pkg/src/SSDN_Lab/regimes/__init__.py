"""
Rotation pretext task, joint training, test-time training and evaluation regimes.
"""
from .rotation import ROTATION_CLASSES, rotate_image, make_rotation_batch, rotation_batches
from .result import Metrics, TTTResult
from .train import TrainConfig, joint_train, train_standard
from .ttt import DEFAULT_UPDATE_GROUPS, TTTConfig, TTTMode, ttt_adapt, rotation_loss
from .evaluate import RegimeKind, evaluate, predict_logits, rotation_error, rotation_logits
