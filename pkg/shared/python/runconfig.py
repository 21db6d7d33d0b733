"""
Run configuration: `[section]` headers and `key = value` lines mapped onto the per-module settings dataclasses.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from decoder import DecodeConfig
from latentops import AugmentConfig, CompileConfig
from posespace import PoseSpaceConfig
from recognizer import TrainSchedule
from sxtypes import SCALE, ConfigError, SignXError
from synthcorpus import SynthConfig
from vid2pose import Vid2PoseConfig


# ------------------------------
#    CONSTANTS
# ------------------------------

COMMENT_PREFIXES = ('#', ';')

TRUE_WORDS  = ('true', 'yes', 'on', '1')
FALSE_WORDS = ('false', 'no', 'off', '0')


# ------------------------------
#    CLASSES
# ------------------------------

@dataclass
class PipelineConfig:
    seed: int = 7
    scale: str = SCALE.DESK.value
    ablation: bool = False

    def validate(self) -> None:
        SCALE(self.scale)
        if self.seed < 0:
            raise ConfigError(f'seed must be non-negative, got {self.seed}')


@dataclass
class RunConfig:
    """
    Every module's tunables, grouped by config section.
    """

    synth: SynthConfig = field(default_factory = SynthConfig)
    posespace: PoseSpaceConfig = field(default_factory = PoseSpaceConfig)
    vid2pose: Vid2PoseConfig = field(default_factory = Vid2PoseConfig)
    compile: CompileConfig = field(default_factory = CompileConfig)
    augment: AugmentConfig = field(default_factory = AugmentConfig)
    recognizer: TrainSchedule = field(default_factory = TrainSchedule)
    decoder: DecodeConfig = field(default_factory = DecodeConfig)
    pipeline: PipelineConfig = field(default_factory = PipelineConfig)

    def sections(self) -> dict[str, list[Any]]:
        """
        Config section name -> the settings objects its keys may address.
        """
        return {
            'synth'      : [self.synth],
            'posespace'  : [self.posespace],
            'vid2pose'   : [self.vid2pose],
            'latentops'  : [self.compile, self.augment],
            'recognizer' : [self.recognizer],
            'decoder'    : [self.decoder],
            'pipeline'   : [self.pipeline],
        }

    def validate(self) -> None:
        for name, targets in self.sections().items():
            for target in targets:
                target.validate()

        if tuple(self.posespace.track_dims) != tuple(self.synth.track_dims) or tuple(self.vid2pose.track_dims) != tuple(self.synth.track_dims):
            raise ConfigError('posespace, vid2pose and synth track_dims must agree')
        if self.vid2pose.frame_size != self.synth.frame_size:
            raise ConfigError(f'vid2pose frame_size {self.vid2pose.frame_size} differs from synth frame_size {self.synth.frame_size}')

    def with_seed(self, seed: int) -> 'RunConfig':
        """
        Route one root seed to the pipeline and every seeded section.
        """
        self.pipeline.seed = seed
        self.synth.seed = seed
        self.compile.seed = seed
        return self

    def with_scale(self, scale: SCALE | str) -> 'RunConfig':
        """
        Switch model widths to the requested scale; track dims stay those of the corpus.
        """
        scale = SCALE(scale)
        self.pipeline.scale = scale.value

        if scale == SCALE.PAPER_SHAPES:
            dims = tuple(self.synth.track_dims)
            self.posespace = dataclasses.replace(PoseSpaceConfig.paper_shapes(), track_dims = dims, epochs = self.posespace.epochs)
            schedule = TrainSchedule.paper_shapes()
            self.recognizer = dataclasses.replace(schedule, epochs = self.recognizer.epochs, batch_size = self.recognizer.batch_size)

        return self


# ------------------------------
#    PARSING
# ------------------------------

def coerce(raw: str, default: Any, line: int) -> Any:
    """
    Convert a raw value to the type of the field's default.
    """
    text = raw.strip()

    try:
        if default is None:
            return None if text.lower() == 'none' else float(text)
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f'not a boolean: {text!r}')
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            element = type(default[0]) if default else int
            return tuple(element(part.strip()) for part in text.split(',') if part.strip())
        return text
    except ValueError as e:
        raise ConfigError(f'cannot parse {text!r} ({e})', line) from None

def _field_defaults(target: Any) -> dict[str, Any]:
    return {f.name: getattr(target, f.name) for f in dataclasses.fields(target)}

def _message(error: Exception) -> str:
    return str(error.args[0]) if error.args else str(error)

def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """
    Parse config text into a RunConfig.

    Args:
        text (str): Lines of `[section]`, `key = value`, blank lines and `#` / `;` comments.
        base (RunConfig, optional): Starting values; defaults otherwise.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        ConfigError: Unknown section or key, unparseable value or out-of-range value, naming the line.
    """

    config = base if base is not None else RunConfig()
    sections = config.sections()
    current: str | None = None
    last_line: dict[str, int] = {}

    for number, raw_line in enumerate(text.splitlines(), start = 1):
        line = raw_line.strip()

        if not line or line.startswith(COMMENT_PREFIXES):
            continue

        if line.startswith('['):
            if not line.endswith(']'):
                raise ConfigError(f'malformed section header {line!r}', number)
            current = line[1:-1].strip().lower()
            if current not in sections:
                raise ConfigError(f'unknown section [{current}]', number)
            last_line[current] = number
            continue

        if current is None:
            raise ConfigError(f'key outside of any section: {line!r}', number)
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", number)

        key, _, value = line.partition('=')
        key = key.strip()
        target = next((t for t in sections[current] if key in _field_defaults(t)), None)

        if target is None:
            raise ConfigError(f'unknown key {key!r} in [{current}]', number)

        setattr(target, key, coerce(value, _field_defaults(target)[key], number))
        last_line[current] = number

    for name, targets in sections.items():
        for target in targets:
            try:
                target.validate()
            except SignXError as e:
                if isinstance(e, ConfigError) and e.line is not None:
                    raise
                raise ConfigError(_message(e), last_line.get(name)) from None
            except ValueError as e:
                raise ConfigError(_message(e), last_line.get(name)) from None

    try:
        config.validate()
    except ConfigError:
        raise
    except SignXError as e:
        raise ConfigError(_message(e)) from None

    return config

def load_run_config(path: str | Path | None = None) -> RunConfig:
    """
    Load a RunConfig from a file; None yields the defaults.
    """
    if path is None:
        config = RunConfig()
        config.validate()
        return config

    path = Path(path)

    if not path.exists():
        raise ConfigError(f'config file {path} does not exist')

    return parse_run_config(path.read_text(encoding = 'utf-8'))
