"""Streaming attention engine: adaptive-computation halting decoder,
baseline monotonic mechanisms, a toy chunkwise transformer, and the
cost/latency instrumentation around them."""

from .attention import (FullyMaskedRowError, HeadProjection, energy,
                        halting_prob, multi_head, scaled_dot_attention)
from .decoding import DecodeResult, beam_decode, decode_utterance, greedy_decode
from .metrics import (CostReport, EditStats, LatencyReport, attention_dump,
                      attention_load, cost_ratio, cost_ratio_set,
                      latency_report, token_error_rate)
from .model import (ChunkLayout, Model, ModelConfig, chunk_mask,
                    positional_encoding, subsample_frontend)
from .monotonic import (context_from_weights, dacs_keep_mask, dacs_train_weights,
                        hma_expected_matrix, hma_expected_weights,
                        mocha_expected_weights, mta_weights, smocha_weights)
from .streaming import (MechanismConfig, StepLog, StepTrace, dacs_head_scan,
                        hma_step, mocha_step, mta_step, sync_step)
from .toytask import ToyTaskConfig, Utterance, gen_toy_dataset
from .training import (Adam, GradCheckReport, TrainConfig, grad_check,
                       label_smoothed_ce, noam_lr, train)

__version__ = "0.1.0"
