"""
Deterministic synthetic sign corpus: a Markov gloss grammar, per-gloss motion templates for the five
pose tracks, alignment spans and a small frame renderer that draws the tracks onto a pixel grid.
"""

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

import utils
from latentops import Container, Record, container_write
from sxtypes import DESK_TRACK_DIMS, FIRST_GLOSS_INDEX, FRAMES_TRACK_ID, TRACKS, ContainerFormatError, GlossSpan, ParameterError, PoseSequence, SPLIT, TRACK


# ------------------------------
#    CONSTANTS
# ------------------------------

GLOSS_WORDS = ['ARRIVE', 'BOOK', 'CAR', 'DRINK', 'EAT', 'FINISH', 'GO', 'HOUSE', 'KNOW', 'LIKE', 'MOTHER', 'NAME',
               'PAPER', 'READ', 'SCHOOL', 'TEACHER', 'UNDERSTAND', 'VISIT', 'WANT', 'WORK', 'YESTERDAY', 'HEAR/LISTEN']

KEYPOINT_TRACKS = (TRACK.DWPOSE, TRACK.MEDIAPIPE)
BAND_TRACKS     = (TRACK.SMPLERX, TRACK.PRIMEDEPTH, TRACK.SAPIENS)

FRAMES_KEY_SUFFIX = f'/{FRAMES_TRACK_ID}'


# ------------------------------
#    CONFIGURATION
# ------------------------------

@dataclass
class SynthConfig:
    vocab_size: int = 12
    utterances: int = 200
    min_glosses: int = 2
    max_glosses: int = 5
    min_frames_per_gloss: int = 8
    max_frames_per_gloss: int = 12
    track_dims: tuple[int, ...] = DESK_TRACK_DIMS
    noise: float = 0.05
    frame_size: int = 16
    seed: int = 7

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ParameterError(f'vocab_size must be at least 2, got {self.vocab_size}')
        if self.utterances < 1:
            raise ParameterError(f'utterances must be at least 1, got {self.utterances}')
        if not 1 <= self.min_glosses <= self.max_glosses:
            raise ParameterError(f'gloss count range {self.min_glosses}..{self.max_glosses} is invalid')
        if not 1 <= self.min_frames_per_gloss <= self.max_frames_per_gloss:
            raise ParameterError(f'frames-per-gloss range {self.min_frames_per_gloss}..{self.max_frames_per_gloss} is invalid')
        if len(self.track_dims) != len(TRACKS) or min(self.track_dims) < 1:
            raise ParameterError(f'track_dims needs {len(TRACKS)} positive widths, got {self.track_dims}')
        if self.noise < 0:
            raise ParameterError(f'noise must be non-negative, got {self.noise}')

    def dims(self) -> dict[str, int]:
        return {track.value: dim for track, dim in zip(TRACKS, self.track_dims)}


# ------------------------------
#    CLASSES
# ------------------------------

@dataclass
class GlossTemplate:
    """
    Per-dimension motion of one gloss: value(s) = start + (end - start) * smoothstep(s) + wobble * sin(pi * s).
    """

    start: dict[str, np.ndarray]
    end: dict[str, np.ndarray]
    wobble: dict[str, np.ndarray]

    def render(self, track: str, frames: int) -> np.ndarray:
        s = np.linspace(0.0, 1.0, frames)[:, None] if frames > 1 else np.zeros((1, 1))
        smooth = s * s * (3.0 - 2.0 * s)
        return self.start[track] + (self.end[track] - self.start[track]) * smooth + self.wobble[track] * np.sin(math.pi * s)


@dataclass
class Utterance:
    index: int
    glosses: list[int]
    pose: PoseSequence
    split: str
    frames: np.ndarray | None = None


@dataclass
class SynthCorpus:
    utterances: list[Utterance]
    gloss_names: list[str]
    transitions: np.ndarray
    templates: list[GlossTemplate] = field(default_factory = list)

    def split(self, name: SPLIT | str) -> list[Utterance]:
        return [u for u in self.utterances if u.split == SPLIT(name)]


# ------------------------------
#    GRAMMAR AND TEMPLATES
# ------------------------------

def gloss_names(vocab_size: int) -> list[str]:
    return [GLOSS_WORDS[i] if i < len(GLOSS_WORDS) else f'SIGN{i}' for i in range(vocab_size)]

def split_of(index: int) -> str:
    """
    80/10/10 split by a hash of the utterance index.
    """
    bucket = int(hashlib.sha256(str(index).encode('utf-8')).hexdigest(), 16) % 10
    if bucket < 8:
        return SPLIT.TRAIN.value
    return SPLIT.DEV.value if bucket == 8 else SPLIT.TEST.value

def transition_matrix(cfg: SynthConfig) -> np.ndarray:
    """
    First-order Markov chain over glosses with no self-transitions.
    """
    rng = utils.make_rng(cfg.seed, 'grammar')
    weights = rng.dirichlet(np.full(cfg.vocab_size, 0.5), size = cfg.vocab_size)
    np.fill_diagonal(weights, 0.0)
    return weights / weights.sum(axis = 1, keepdims = True)

def make_templates(cfg: SynthConfig) -> list[GlossTemplate]:
    templates = []

    for g in range(cfg.vocab_size):
        rng = utils.make_rng(cfg.seed, 'templates', g)
        start, end, wobble = {}, {}, {}

        for track, dim in cfg.dims().items():
            start[track] = rng.choice([-1.0, 1.0], size = dim) * rng.uniform(0.3, 0.8, size = dim)
            end[track] = rng.choice([-1.0, 1.0], size = dim) * rng.uniform(0.3, 0.8, size = dim)
            wobble[track] = rng.uniform(-0.2, 0.2, size = dim)

        templates.append(GlossTemplate(start, end, wobble))

    return templates

def save_transitions(path: str | Path, transitions: np.ndarray, names: Sequence[str]) -> None:
    pd.DataFrame(transitions, index = list(names), columns = list(names)).to_csv(path, float_format = '%.10f')

def load_transitions(path: str | Path) -> np.ndarray:
    return pd.read_csv(path, index_col = 0).to_numpy(dtype = np.float64)


# ------------------------------
#    GENERATION
# ------------------------------

def gen_utterance(index: int, cfg: SynthConfig, transitions: np.ndarray, templates: Sequence[GlossTemplate]) -> Utterance:
    """
    One utterance: Markov gloss sequence, per-gloss durations, template tracks plus Gaussian noise.

    The first gloss is index mod vocab_size so every gloss occurs once the corpus is at least vocab_size long.
    Gloss values are codebook indices (offset by the reserved tokens).
    """
    rng = utils.make_rng(cfg.seed, 'corpus', index)
    count = int(rng.integers(cfg.min_glosses, cfg.max_glosses + 1))
    sequence = [index % cfg.vocab_size]

    while len(sequence) < count:
        sequence.append(int(rng.choice(cfg.vocab_size, p = transitions[sequence[-1]])))

    durations = rng.integers(cfg.min_frames_per_gloss, cfg.max_frames_per_gloss + 1, size = count)
    tracks = {track: [] for track in cfg.dims()}
    spans = []
    t = 0

    for g, frames in zip(sequence, durations):
        for track in tracks:
            tracks[track].append(templates[g].render(track, int(frames)))
        spans.append(GlossSpan(g + FIRST_GLOSS_INDEX, t, t + int(frames) - 1))
        t += int(frames)

    pose_tracks = {}
    for track, dim in cfg.dims().items():
        clean = np.concatenate(tracks[track], axis = 0)
        pose_tracks[track] = clean + rng.normal(0.0, cfg.noise, size = clean.shape) if cfg.noise > 0 else clean

    return Utterance(index, [s.gloss for s in spans], PoseSequence(pose_tracks, spans), split_of(index))

def gen_corpus(cfg: SynthConfig, render: bool = True) -> SynthCorpus:
    """
    Generate the full corpus; fully determined by cfg.seed, and a longer corpus at the same seed
    starts with the shorter one.

    Args:
        cfg (SynthConfig): Corpus settings.
        render (bool): Also render frames for each utterance.

    Returns:
        SynthCorpus: Utterances, gloss names, the transition matrix and templates.
    """

    cfg.validate()
    transitions = transition_matrix(cfg)
    templates = make_templates(cfg)
    utterances = []

    for i in range(cfg.utterances):
        utterance = gen_utterance(i, cfg, transitions, templates)
        if render:
            utterance.frames = render_frames(utterance.pose.tracks, cfg.frame_size)
        utterances.append(utterance)

    return SynthCorpus(utterances, gloss_names(cfg.vocab_size), transitions, templates)


# ------------------------------
#    RENDERING
# ------------------------------

def _frame_layout(dims: dict[str, int], frame_size: int) -> tuple[int, int]:
    keypoint_rows = sum(dims[t.value] // 2 for t in KEYPOINT_TRACKS)
    band_cells = 2 * sum(dims[t.value] for t in BAND_TRACKS)
    band_rows = math.ceil(band_cells / frame_size)

    if any(dims[t.value] % 2 for t in KEYPOINT_TRACKS):
        raise ParameterError('keypoint tracks need an even number of dimensions (x, y pairs)')
    if keypoint_rows + band_rows > frame_size:
        raise ParameterError(f'track dims {tuple(dims.values())} do not fit a {frame_size}x{frame_size} frame')

    return keypoint_rows, band_rows

def render_frames(tracks: dict[str, np.ndarray], frame_size: int = 16) -> np.ndarray:
    """
    Draw pose tracks onto (T, frame_size, frame_size, 1) frames.

    Each keypoint (x, y) of the keypoint tracks is a Gaussian blob on its own row, centered at the
    column given by x with brightness given by y; a point at (0, 0) is not drawn. The remaining
    tracks fill band rows below, one positive and one negative pixel per dimension.
    """

    dims = {t.value: int(np.shape(tracks[t.value])[1]) for t in TRACKS}
    keypoint_rows, _ = _frame_layout(dims, frame_size)
    T = int(np.shape(tracks[TRACKS[0].value])[0])
    frames = np.zeros((T, frame_size, frame_size))
    columns = np.arange(frame_size, dtype = np.float64)

    row = 0
    for track in KEYPOINT_TRACKS:
        values = np.clip(np.asarray(tracks[track.value], dtype = np.float64), -1.0, 1.0)
        for p in range(dims[track.value] // 2):
            x, y = values[:, 2 * p], values[:, 2 * p + 1]
            centre = (x + 1.0) / 2.0 * (frame_size - 1)
            amplitude = 0.5 + 0.25 * (y + 1.0)
            blob = amplitude[:, None] * np.exp(-0.5 * ((columns[None, :] - centre[:, None]) / 0.9) ** 2)
            drawn = (x != 0.0) | (y != 0.0)
            frames[:, row, :] = blob * drawn[:, None]
            row += 1

    band = np.clip(np.concatenate([np.asarray(tracks[t.value], dtype = np.float64) for t in BAND_TRACKS], axis = 1), -1.0, 1.0)
    cells = np.stack([np.maximum(band, 0.0), np.maximum(-band, 0.0)], axis = -1).reshape(T, -1)
    padded = np.zeros((T, (frame_size - keypoint_rows) * frame_size))
    padded[:, :cells.shape[1]] = cells
    frames[:, keypoint_rows:, :] = padded.reshape(T, frame_size - keypoint_rows, frame_size)

    return frames[..., None]


# ------------------------------
#    STORAGE
# ------------------------------

def concat_tracks(pose: PoseSequence) -> np.ndarray:
    return np.concatenate([pose.tracks[t.value] for t in TRACKS], axis = 1)

def split_tracks(features: np.ndarray, dims: dict[str, int]) -> dict[str, np.ndarray]:
    if features.shape[1] != sum(dims.values()):
        raise ContainerFormatError(f'record width {features.shape[1]} does not match track dims {tuple(dims.values())}')

    out, offset = {}, 0
    for track in TRACKS:
        width = dims[track.value]
        out[track.value] = features[:, offset:offset + width].astype(np.float64)
        offset += width
    return out

def write_corpus(path: str | Path, corpus: SynthCorpus) -> None:
    """
    Store each utterance as record "i" (concatenated tracks + spans) and "i/frames" (flattened frames).
    """
    records = []

    for u in corpus.utterances:
        records.append((str(u.index), Record(concat_tracks(u.pose).astype(np.float32), u.pose.spans)))
        if u.frames is not None:
            records.append((f'{u.index}{FRAMES_KEY_SUFFIX}', Record(u.frames.reshape(u.frames.shape[0], -1).astype(np.float32), [])))

    container_write(path, records)

def read_corpus(path: str | Path, cfg: SynthConfig) -> list[Utterance]:
    container = Container(path)
    dims = cfg.dims()
    utterances = []

    for key in container.keys():
        if key.endswith(FRAMES_KEY_SUFFIX):
            continue

        record = container.get(key)
        index = int(key)
        pose = PoseSequence(split_tracks(record.features, dims), list(record.spans))
        frames_key = f'{key}{FRAMES_KEY_SUFFIX}'
        frames = None

        if frames_key in container:
            flat = container.get(frames_key).features.astype(np.float64)
            frames = flat.reshape(flat.shape[0], cfg.frame_size, cfg.frame_size, -1)

        utterances.append(Utterance(index, pose.glosses, pose, split_of(index), frames))

    return sorted(utterances, key = lambda u: u.index)
