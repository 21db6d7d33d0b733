"""
Types, constants and errors shared across the SignX latent-space recognition pipeline.
"""

import os
from dataclasses import dataclass, field
from enum import IntEnum

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self) -> str:
            return str(self.value)

        def __format__(self, format_spec: str) -> str:
            return str(self.value).__format__(format_spec)
from pathlib import Path

import numpy as np


# ------------------------------
#    PRIVATE METHODS
# ------------------------------

def _get_project_root() -> Path:
    """Get the project root directory path."""
    # Try to get from environment variable first (set by .env file)
    if 'PROJECT_ROOT' in os.environ:
        return Path(os.environ['PROJECT_ROOT'])

    # Fallback: detect project root by walking up from this file
    current_path = Path(__file__).resolve().parent.parent.parent  # Go up from shared/python/
    indicators = ['README.md', 'requirements.txt']

    while current_path != current_path.parent:
        if all((current_path / indicator).exists() for indicator in indicators):
            return current_path
        current_path = current_path.parent

    # Ultimate fallback
    return Path(__file__).resolve().parent.parent.parent


# ------------------------------
#    CONSTANTS
# ------------------------------

PROJECT_ROOT = _get_project_root()

# Paper-scale widths of the five pose tracks (sum 1959) and the unified latent
PAPER_TRACK_DIMS = (384, 258, 165, 576, 576)
PAPER_UNIFIED_WIDTH = 2048

# Desk-scale defaults
DESK_TRACK_DIMS = (12, 8, 6, 16, 16)
DESK_HIDDEN_WIDTH = 32
DESK_UNIFIED_WIDTH = 64

# Fixed artifact names under --out
CORPUS_ARTIFACT       = 'corpus.sxf'
CODEBOOK_ARTIFACT     = 'codebook.txt'
TRANSITIONS_ARTIFACT  = 'transitions.csv'
STAGE1_ARTIFACT       = 'stage1.sxck'
STAGE2_ARTIFACT       = 'stage2.sxck'
FEATURES_ARTIFACT     = 'features.sxf'
AUGMENTED_ARTIFACT    = 'features_aug.sxf'
CSLR_ARTIFACT         = 'cslr.sxck'
CSLR_RESUME_ARTIFACT  = 'cslr.last.sxck'
DECODE_ARTIFACT       = 'decode.jsonl'
REPORT_ARTIFACT       = 'report.csv'
ABLATION_ARTIFACT     = 'ablation.csv'
PRUNE_REPORT_ARTIFACT = 'prune_report.csv'


# ------------------------------
#    ENUMS
# ------------------------------

class Token(IntEnum):
    """
    Reserved codebook indices. Glosses start right after PAD.
    """

    BLANK = 0
    BOS   = 1
    EOS   = 2
    PAD   = 3

FIRST_GLOSS_INDEX = 4


class TRACK(StrEnum):
    """
    The five pose tracks, in concatenation order.
    """

    DWPOSE     = 'dwpose'       # 2D whole-body keypoints
    MEDIAPIPE  = 'mediapipe'    # lightweight 3D landmarks
    SMPLERX    = 'smplerx'      # body-model parameters
    PRIMEDEPTH = 'primedepth'   # hand depth
    SAPIENS    = 'sapiens'      # body-part segmentation

TRACKS: tuple[TRACK, ...] = tuple(TRACK)

# Track id used for rendered frames inside the feature container
FRAMES_TRACK_ID = 'frames'


class STAGE(StrEnum):
    """
    Pipeline stages in execution order.
    """

    SYNTH        = 'synth'
    TRAIN_STAGE1 = 'train-stage1'
    TRAIN_STAGE2 = 'train-stage2'
    COMPILE      = 'compile'
    AUGMENT      = 'augment'
    TRAIN_CSLR   = 'train-cslr'
    DECODE       = 'decode'
    EVAL         = 'eval'


class SCALE(StrEnum):
    """
    Model scale selector.
    """

    DESK         = 'desk'
    PAPER_SHAPES = 'paper-shapes'


class SPLIT(StrEnum):
    """
    Utterance splits.
    """

    TRAIN = 'train'
    DEV   = 'dev'
    TEST  = 'test'


class TEACHER_MODE(StrEnum):
    """
    How the distillation teacher is obtained.
    """

    PRETRAIN = 'pretrain'   # trained on CTC alone first, then frozen
    COTRAIN  = 'cotrain'    # trained alongside the student, logits detached for KD


# ------------------------------
#    EXCEPTIONS
# ------------------------------

class SignXError(Exception):
    """
    Base error. `code` is the stable machine-parsable prefix printed by the CLI.
    """

    code = 'E_SIGNX'

    def __str__(self) -> str:
        return f'{self.code}: {super().__str__()}'

class DimensionError(SignXError, ValueError):
    code = 'E_DIM'

class EmptyInputError(SignXError, ValueError):
    code = 'E_EMPTY'

class ContractError(SignXError, ValueError):
    code = 'E_CONTRACT'

class ArityError(SignXError, ValueError):
    code = 'E_ARITY'

class PatchingError(SignXError, ValueError):
    code = 'E_PATCH'

class SequenceTooShortError(SignXError, ValueError):
    code = 'E_SHORT'

class TrainingDivergenceError(SignXError, ArithmeticError):
    code = 'E_DIVERGED'

class FrozenParameterError(SignXError, RuntimeError):
    code = 'E_FROZEN'

class CodebookError(SignXError, KeyError):
    code = 'E_CODEBOOK'

class DegenerateInputError(SignXError, ValueError):
    code = 'E_DEGENERATE'

class ParameterError(SignXError, ValueError):
    code = 'E_PARAM'

class InsufficientDataError(SignXError, ValueError):
    code = 'E_NODATA'

class ContainerFormatError(SignXError, ValueError):
    code = 'E_FORMAT'

class DuplicateKeyError(ContainerFormatError):
    code = 'E_DUPKEY'

class RecordNotFoundError(SignXError, KeyError):
    code = 'E_NOTFOUND'

class InfeasibleAlignmentError(SignXError, ValueError):
    code = 'E_INFEASIBLE'

class CheckpointIncompatibilityError(SignXError, ValueError):
    code = 'E_CKPT'

class UndefinedMetricError(SignXError, ValueError):
    code = 'E_METRIC'

class DependencyError(SignXError, FileNotFoundError):
    code = 'E_DEPENDENCY'

class ConfigError(SignXError, ValueError):
    """
    Config parse or validation failure, optionally tied to a line of the config file.
    """

    code = 'E_CONFIG'

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f'line {line}: {message}' if line is not None else message)


# ------------------------------
#    CLASSES
# ------------------------------

@dataclass(frozen = True)
class GlossSpan:
    """
    One gloss occupying frames start..end (both inclusive).
    """

    gloss: int
    start: int
    end: int

    def covers(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass
class PoseFrameBundle:
    """
    One frame's five pose tracks plus a per-track confidence in [0, 1].
    """

    dwpose: np.ndarray
    mediapipe: np.ndarray
    smplerx: np.ndarray
    primedepth: np.ndarray
    sapiens: np.ndarray
    confidence: np.ndarray = field(default_factory = lambda: np.ones(len(TRACKS)))

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def track(self, track_id: TRACK | str) -> np.ndarray:
        return getattr(self, TRACK(track_id).value)

    def concat(self) -> np.ndarray:
        """
        Concatenate the five tracks in canonical order (length 1959 with full-width tracks).
        """
        return np.concatenate([self.track(t) for t in TRACKS])


@dataclass
class PoseSequence:
    """
    T frames of the five pose tracks, stored per track as (T, D_i) arrays, with gloss spans.
    """

    tracks: dict[str, np.ndarray]
    spans: list[GlossSpan] = field(default_factory = list)
    confidence: np.ndarray | None = None   # (T, 5); None means all ones

    # ------------------------------
    #    PROPERTIES
    # ------------------------------

    @property
    def length(self) -> int:
        return int(next(iter(self.tracks.values())).shape[0])

    @property
    def glosses(self) -> list[int]:
        return [span.gloss for span in self.spans]

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def confidences(self) -> np.ndarray:
        if self.confidence is None:
            return np.ones((self.length, len(TRACKS)))
        return self.confidence

    def frame(self, t: int) -> PoseFrameBundle:
        return PoseFrameBundle(*(self.tracks[tr.value][t] for tr in TRACKS), confidence = self.confidences()[t])


@dataclass
class LatentSequence:
    """
    Per-frame unified latents z (T, d_u) with gloss alignment a, validity mask m and gloss spans.
    """

    z: np.ndarray
    a: np.ndarray
    m: np.ndarray
    gloss_spans: list[GlossSpan] = field(default_factory = list)

    # ------------------------------
    #    PROPERTIES
    # ------------------------------

    @property
    def length(self) -> int:
        return int(self.z.shape[0])

    @property
    def width(self) -> int:
        return int(self.z.shape[1])

    @property
    def glosses(self) -> list[int]:
        return [span.gloss for span in self.gloss_spans]

    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    @classmethod
    def from_features(cls, z: np.ndarray, spans: list[GlossSpan]) -> 'LatentSequence':
        """
        Build a sequence with all frames valid and an unfilled (PAD) alignment.
        """
        z = np.asarray(z, dtype = np.float64)
        T = z.shape[0]
        return cls(z, np.full(T, int(Token.PAD), dtype = np.int64), np.ones(T, dtype = np.int64), list(spans))
