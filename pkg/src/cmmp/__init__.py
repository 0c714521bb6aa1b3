"""Two-stream sequence classification with cross-modal message passing."""

from .bench import CELL_NAMES, ExperimentCell, MatrixResult, run_matrix
from .checkpoint import (Checkpoint, CheckpointFormatError, apply_checkpoint,
                         load_checkpoint, restore, save_checkpoint)
from .evaluation import EvalResult, evaluate
from .gradcheck import full_model_gradcheck
from .layers import (EncoderParams, LinearParams, LstmLayerParams,
                     MessageGeneratorParams, linear_forward, lstm2_forward,
                     lstm_cell_step, mlp_encode_sequence)
from .metrics import MetricsRecord, MetricsWriter, read_metrics
from .model import (FUSION_MODES, CMMPModel, ModeError, ModelDims, StreamOutputs,
                    forward_full, fuse_features, generate_messages, init_model,
                    predict, stream_scores)
from .objectives import (LossBundle, adversarial_losses, cross_entropy, hinge)
from .synthdata import (Dataset, DatasetFormatError, DatasetSpec, Sample,
                        generate, load_dataset, sample_segments, save_dataset)
from .tensor import (NumericError, Node, ShapeError, Tape, Tensor,
                     finite_difference_grad, primitive_forward)
from .trainer import (OptimizerState, TrainConfig, dims_for, finetune_stage,
                      lr_schedule, pretrain_stage, sgd_momentum_step, train)

__version__ = "0.1.0"
