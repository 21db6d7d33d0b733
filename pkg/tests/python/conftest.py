"""
Shared test configuration and fixtures for pytest.
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add the shared/python directory to the Python path for all tests
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../../shared/python')))

from decoder import DecodeConfig
from latentops import AugmentConfig, CompileConfig
from posespace import PoseSpaceConfig
from recognizer import TrainSchedule
from runconfig import PipelineConfig, RunConfig
from sxtypes import GlossSpan, LatentSequence
from synthcorpus import SynthConfig
from vid2pose import Vid2PoseConfig


# ------------------------------
#    SHARED FIXTURES
# ------------------------------

@pytest.fixture(scope='session')
def shared_python_path() -> str:
    """Provide the path to the shared Python modules."""
    return os.path.abspath(os.path.join(os.path.dirname(__file__), '../../shared/python'))

@pytest.fixture
def tiny_synth() -> SynthConfig:
    """12 utterances over 4 glosses; indices 3 and 11 land in dev, 7 and 8 in test."""
    return SynthConfig(vocab_size = 4, utterances = 12, min_glosses = 1, max_glosses = 2,
                       min_frames_per_gloss = 4, max_frames_per_gloss = 6, seed = 7)

@pytest.fixture
def tiny_schedule() -> TrainSchedule:
    return TrainSchedule(d_model = 8, heads = 2, encoder_layers = 1, decoder_layers = 1, ffn_width = 16, kernels = (3, 5),
                         conv_width = 4, conv_out = 8, rnn_hidden = 4, rnn_layers = 1, teacher_width = 8, warmup = 4,
                         epochs = 2, batch_size = 4, prune_interval = 1, prune_threshold = 1e-6, top_checkpoints = 2,
                         teacher_pretrain_epochs = 1)

@pytest.fixture
def tiny_run_config(tiny_synth, tiny_schedule) -> RunConfig:
    """A RunConfig small enough to run every stage in seconds."""
    config = RunConfig(
        synth = tiny_synth,
        posespace = PoseSpaceConfig(hidden_width = 8, unified_width = 16, heads = 2, latent_blocks = 1, epochs = 1, micro_batch = 4, accumulation_steps = 1),
        vid2pose = Vid2PoseConfig(patch_width = 8, frame_width = 16, heads = 2, epochs = 1, batch_size = 4),
        compile = CompileConfig(seed = 7),
        augment = AugmentConfig(folds = 2),
        recognizer = replace(tiny_schedule, epochs = 1),
        decoder = DecodeConfig(beam_size = 2, top_k = 3, max_length = 4),
        pipeline = PipelineConfig(seed = 7),
    )
    config.validate()
    return config


@pytest.fixture
def make_latent():
    """Factory for random latent sequences with contiguous spans of `frames_per_gloss` frames per gloss."""
    def factory(rng: np.random.Generator, glosses: list[int], frames_per_gloss: int = 8, width: int = 16) -> LatentSequence:
        spans = [GlossSpan(g, i * frames_per_gloss, (i + 1) * frames_per_gloss - 1) for i, g in enumerate(glosses)]
        z = rng.normal(size = (len(glosses) * frames_per_gloss, width))
        return LatentSequence.from_features(z, spans)

    return factory
