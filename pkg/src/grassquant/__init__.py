"""Recursive multi-stage Grassmannian quantization of time-correlated MIMO
channel subspaces, with selective stage updates and per-stage neural
classification replacing the exhaustive codebook scan."""

from .channel import (ChannelTrajectory, CorrelationSpec, bessel_j0,
                      generate_clarke_sos, generate_gauss_markov, generate_iid,
                      load_trajectory, save_trajectory, substream)
from .classifier import (Hyperparams, StageNetwork, TrainingSet, canonicalize,
                         classify, classify_many, generate_training_set,
                         init_network, load_network, save_network, train)
from .codebook import (CodebookLadder, FlatCodebook, StageCodebook,
                       build_flat_codebook, build_ladder, build_stage_codebook,
                       load_codebook, save_codebook)
from .errors import (BindingMismatchError, CapacityExceededError,
                     CodebookFormatError, ConfigError, DegenerateStageError,
                     GrassquantError, NeedsCalibrationError, NumericalFailure,
                     TrainingFailure)
from .numerics import (chordal_distance, compact_svd, complement_completion,
                       inv_sqrt_hermitian, is_semi_unitary, random_semiunitary)
from .quantizer import (DistortionModel, FeedbackRecord, QuantizerState,
                        SingleStageState, calibrate_constant,
                        exact_stage_distortion_m1, quantize_chain_batch,
                        quantize_single_stage, recursive_quantize_full,
                        recursive_quantize_selective, replay_feedback,
                        single_stage_selective, sqbc, stage_select,
                        theory_multi_stage, theory_single_stage)

__version__ = "0.1.0"
