"""
Pipeline stages: synth -> train-stage1 -> train-stage2 -> compile -> augment -> train-cslr -> decode -> eval.

Each stage checks its prerequisite artifacts, writes its own artifact under the output directory and
a `<stage>.summary.json`.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

import numcore as nc
import utils
from decoder import DecodeResult, beam_decode, decode_to_json
from evalkit import evaluate, write_report
from latentops import CompileConfig, Container, Record, augment, compile_sequence, container_write, prune_report
from posespace import Codebook, Stage1Model, encode_sequence, train_stage1
from recognizer import Recognizer, train_cslr
from reports import CurveSet, write_ablation, write_prune_report
from runconfig import RunConfig
from sxtypes import (ABLATION_ARTIFACT, AUGMENTED_ARTIFACT, CODEBOOK_ARTIFACT, CORPUS_ARTIFACT, CSLR_ARTIFACT, CSLR_RESUME_ARTIFACT,
                     DECODE_ARTIFACT, FEATURES_ARTIFACT, PRUNE_REPORT_ARTIFACT, REPORT_ARTIFACT, SPLIT, STAGE, STAGE1_ARTIFACT,
                     STAGE2_ARTIFACT, TRACKS, TRANSITIONS_ARTIFACT, DependencyError, LatentSequence, ParameterError, PoseSequence, TRACK)
from synthcorpus import Utterance, gen_corpus, read_corpus, save_transitions, split_of, write_corpus
from vid2pose import Vid2PoseModel, per_dimension_mse, predict_tracks, train_stage2


# ------------------------------
#    CONSTANTS
# ------------------------------

PRUNE_REPORT_STAGE = 'prune-report'
CURVES_DIR         = 'curves'


# ------------------------------
#    CONTEXT
# ------------------------------

@dataclass
class PipelineContext:
    config: RunConfig
    out: Path
    resume: bool = False

    @property
    def seed(self) -> int:
        return self.config.pipeline.seed

    def path(self, name: str) -> Path:
        return self.out / name


# ------------------------------
#    BASE STAGE
# ------------------------------

class Stage:
    """
    Represents the base Stage class
    """

    name: str = ''
    requires: tuple[str, ...] = ()
    produces: tuple[str, ...] = ()

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, ctx: PipelineContext) -> None:
        self.ctx = ctx
        self.cfg = ctx.config


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def run(self) -> dict:
        """
        Check prerequisites, execute the stage and write its summary.

        Returns:
            dict: The stage summary.
        """

        self._check_requirements()
        summary_path = self.ctx.path(f'{self.name}.summary.json')

        if self.ctx.resume and self._can_skip() and summary_path.exists():
            utils.print_ok(f'{self.name}: artifacts present, skipping')
            return utils.read_json(summary_path)

        utils.print_header(f'Stage {self.name}')
        start = time.time()
        summary = {'stage': self.name, 'seed': self.ctx.seed, **self._execute()}
        utils.write_json(summary_path, summary)
        utils.print_ok(f'{self.name} complete', duration = utils.format_duration(time.time() - start))
        return summary


    # ------------------------------
    #    PRIVATE METHODS
    # ------------------------------

    def _execute(self) -> dict:
        raise NotImplementedError

    def _can_skip(self) -> bool:
        return all(self.ctx.path(name).exists() for name in self.produces)

    def _check_requirements(self) -> None:
        for name in self.requires:
            if not self.ctx.path(name).exists():
                raise DependencyError(f'stage {self.name} needs {name} in {self.ctx.out}; run the producing stage first')

    def _fresh_log(self, name: str) -> Path:
        path = self.ctx.path(name)
        path.unlink(missing_ok = True)
        return path

    def _write_curves(self, records: list[dict]) -> None:
        CurveSet(self.name, records).write(self.ctx.path(CURVES_DIR))

    def _codebook(self) -> Codebook:
        return Codebook.load(self.ctx.path(CODEBOOK_ARTIFACT))

    def _corpus(self) -> list[Utterance]:
        return read_corpus(self.ctx.path(CORPUS_ARTIFACT), self.cfg.synth)

    def _stage1(self) -> Stage1Model:
        model = Stage1Model(self.cfg.posespace, len(self._codebook()), utils.make_rng(self.ctx.seed, 'stage1-init'))
        model.load_state_arrays(nc.load_checkpoint(self.ctx.path(STAGE1_ARTIFACT)))
        model.eval()
        return model

    def _stage2(self) -> Vid2PoseModel:
        model = Vid2PoseModel(self.cfg.vid2pose, utils.make_rng(self.ctx.seed, 'stage2-init'))
        model.load_state_arrays(nc.load_checkpoint(self.ctx.path(STAGE2_ARTIFACT)))
        model.eval()
        return model

    def _recognizer(self) -> Recognizer:
        model = Recognizer(self.cfg.posespace.unified_width, len(self._codebook()), self.cfg.recognizer, utils.make_rng(self.ctx.seed, 'cslr-init'))
        model.load_state_arrays(nc.load_checkpoint(self.ctx.path(CSLR_ARTIFACT)))
        model.eval()
        return model

    def _features(self, split: SPLIT | None = None) -> dict[int, LatentSequence]:
        container = Container(self.ctx.path(FEATURES_ARTIFACT))
        keys = sorted(container.keys(), key = int)
        return {int(k): container.get(k).to_latent() for k in keys if split is None or split_of(int(k)) == split}


def parallel_map(fn: Callable, items: Sequence, label: str) -> list:
    """
    Map over items with SIGNX_THREADS workers, keeping input order.
    """
    threads = min(utils.get_thread_count(), max(1, len(items)))

    if threads == 1:
        return [fn(item) for item in items]

    utils.print_info(f'{label}: {len(items)} items on {threads} threads')
    with ThreadPoolExecutor(max_workers = threads) as executor:
        return list(executor.map(fn, items))


# ------------------------------
#    STAGES
# ------------------------------

class SynthStage(Stage):
    name = STAGE.SYNTH.value
    produces = (CORPUS_ARTIFACT, CODEBOOK_ARTIFACT, TRANSITIONS_ARTIFACT)

    def _execute(self) -> dict:
        corpus = gen_corpus(self.cfg.synth)
        write_corpus(self.ctx.path(CORPUS_ARTIFACT), corpus)
        Codebook(corpus.gloss_names).save(self.ctx.path(CODEBOOK_ARTIFACT))
        save_transitions(self.ctx.path(TRANSITIONS_ARTIFACT), corpus.transitions, corpus.gloss_names)

        counts = {split.value: len(corpus.split(split)) for split in SPLIT}
        utils.print_val('Utterances', ', '.join(f'{k} {v}' for k, v in counts.items()))
        return {'utterances': counts, 'vocab_size': len(corpus.gloss_names),
                'frames': int(sum(u.pose.length for u in corpus.utterances)),
                'corpus_sha256': utils.sha256_file(self.ctx.path(CORPUS_ARTIFACT))}


class Stage1Stage(Stage):
    name = STAGE.TRAIN_STAGE1.value
    requires = (CORPUS_ARTIFACT, CODEBOOK_ARTIFACT)
    produces = (STAGE1_ARTIFACT,)

    def _execute(self) -> dict:
        train = [u.pose for u in self._corpus() if u.split == SPLIT.TRAIN]
        model = Stage1Model(self.cfg.posespace, len(self._codebook()), utils.make_rng(self.ctx.seed, 'stage1-init'))
        result = train_stage1(model, train, self.cfg.posespace, self.ctx.seed, self._fresh_log(f'{self.name}.log.jsonl'))
        nc.save_checkpoint(self.ctx.path(STAGE1_ARTIFACT), model.state_arrays())
        self._write_curves(result.records)
        return {'final_loss': result.records[-1]['loss'], 'parameters': model.num_parameters(),
                'stage1_sha256': nc.checkpoint_sha256(self.ctx.path(STAGE1_ARTIFACT))}


class Stage2Stage(Stage):
    name = STAGE.TRAIN_STAGE2.value
    requires = (CORPUS_ARTIFACT, CODEBOOK_ARTIFACT, STAGE1_ARTIFACT)
    produces = (STAGE2_ARTIFACT,)

    def _execute(self) -> dict:
        stage1_path = self.ctx.path(STAGE1_ARTIFACT)
        before = nc.checkpoint_sha256(stage1_path)
        corpus = self._corpus()
        pairs = {split: [(u.frames, u.pose) for u in corpus if u.split == split and u.frames is not None] for split in SPLIT}

        frozen = self._stage1()
        model = Vid2PoseModel(self.cfg.vid2pose, utils.make_rng(self.ctx.seed, 'stage2-init'))
        result = train_stage2(model, frozen, pairs[SPLIT.TRAIN], self.cfg.vid2pose, self.ctx.seed, self._fresh_log(f'{self.name}.log.jsonl'))
        nc.save_checkpoint(self.ctx.path(STAGE2_ARTIFACT), model.state_arrays())
        self._write_curves(result.records)

        after = nc.checkpoint_sha256(stage1_path)
        held_out = per_dimension_mse(model, pairs[SPLIT.DEV]) if pairs[SPLIT.DEV] else float('nan')
        utils.print_val('Held-out MSE', f'{held_out:.5f}')
        return {'final_loss': result.records[-1]['loss'], 'held_out_mse': held_out,
                'stage1_sha256_before': before, 'stage1_sha256_after': after, 'stage1_unchanged': before == after}


def extract_latents(stage1: Stage1Model, stage2: Vid2PoseModel, utterance: Utterance, ablate: str | None = None) -> LatentSequence:
    """
    Frames -> predicted pose tracks -> Stage-1 latents; an ablated track is zeroed with confidence 0.
    """
    predicted = {track: t.data for track, t in predict_tracks(stage2, utterance.frames).items()}
    confidence = None

    if ablate is not None:
        predicted[ablate] = np.zeros_like(predicted[ablate])
        confidence = np.ones((utterance.pose.length, len(TRACKS)))
        confidence[:, [t.value for t in TRACKS].index(ablate)] = 0.0

    z = encode_sequence(stage1, PoseSequence(predicted, utterance.pose.spans, confidence))
    return LatentSequence.from_features(z.data, utterance.pose.spans)


class CompileStage(Stage):
    name = STAGE.COMPILE.value
    requires = (CORPUS_ARTIFACT, CODEBOOK_ARTIFACT, STAGE1_ARTIFACT, STAGE2_ARTIFACT)
    produces = (FEATURES_ARTIFACT,)

    def _execute(self) -> dict:
        stage1, stage2 = self._stage1(), self._stage2()
        corpus = self._corpus()

        def compile_one(u: Utterance) -> tuple[str, Record]:
            cfg = self.cfg.compile if u.split == SPLIT.TRAIN else _no_drop(self.cfg.compile)
            return str(u.index), Record.from_latent(compile_sequence(extract_latents(stage1, stage2, u), cfg, stream = u.index))

        records = parallel_map(compile_one, corpus, 'compile')
        container_write(self.ctx.path(FEATURES_ARTIFACT), records)
        dropped = int(sum(int((~np.any(r.features != 0, axis = 1)).sum()) for _, r in records))
        return {'records': len(records), 'width': int(records[0][1].features.shape[1]), 'dropped_frames': dropped}


def _no_drop(cfg: CompileConfig) -> CompileConfig:
    return replace(cfg, rho = 0.0)


class AugmentStage(Stage):
    name = STAGE.AUGMENT.value
    requires = (FEATURES_ARTIFACT,)
    produces = (AUGMENTED_ARTIFACT,)

    def _execute(self) -> dict:
        train = self._features(SPLIT.TRAIN)
        cfg = self.cfg.augment

        def augment_one(item: tuple[int, LatentSequence]) -> list[tuple[str, Record]]:
            sid, seq = item
            return [(key, Record.from_latent(fold)) for key, fold in augment(sid, seq, cfg, self.ctx.seed).items()]

        records = [r for chunk in parallel_map(augment_one, list(train.items()), 'augment') for r in chunk]
        container_write(self.ctx.path(AUGMENTED_ARTIFACT), records)
        return {'samples': len(train), 'folds': cfg.folds, 'records': len(records)}


class CSLRStage(Stage):
    name = STAGE.TRAIN_CSLR.value
    requires = (FEATURES_ARTIFACT, AUGMENTED_ARTIFACT, CODEBOOK_ARTIFACT)
    produces = (CSLR_ARTIFACT,)

    def _execute(self) -> dict:
        container = Container(self.ctx.path(AUGMENTED_ARTIFACT))
        folds: dict[int, list[tuple[int, LatentSequence]]] = {}

        for key in container.keys():
            sid, fold = (int(part) for part in key.split('_'))
            folds.setdefault(sid, []).append((fold, container.get(key).to_latent()))

        train_folds = {sid: [seq for _, seq in sorted(entries, key = lambda e: e[0])] for sid, entries in sorted(folds.items())}
        dev = list(self._features(SPLIT.DEV).values())

        model = Recognizer(self.cfg.posespace.unified_width, len(self._codebook()), self.cfg.recognizer, utils.make_rng(self.ctx.seed, 'cslr-init'))
        resume_path = self.ctx.path(CSLR_RESUME_ARTIFACT)
        log_path = self.ctx.path(f'{self.name}.log.jsonl') if self.ctx.resume else self._fresh_log(f'{self.name}.log.jsonl')

        if not self.ctx.resume:
            resume_path.unlink(missing_ok = True)

        result = train_cslr(model, train_folds, dev, self.cfg.recognizer, self.ctx.seed, log_path, resume_path, self.ctx.resume)
        nc.save_checkpoint(self.ctx.path(CSLR_ARTIFACT), model.state_arrays())
        self._write_curves(result.records)

        best = result.ranked[0] if result.ranked else None
        return {'epochs': len(result.records), 'best_dev_wer': best.wer if best else None, 'best_epoch': best.epoch if best else None,
                'averaged_checkpoints': len(result.ranked), 'effective_width': result.mask.effective_width,
                'parameters': model.num_parameters()}

    def _can_skip(self) -> bool:
        return False


def decode_latents(model: Recognizer, sequence: LatentSequence, cfg) -> DecodeResult:
    H, _ = model.encode(sequence.z)
    return beam_decode(H.data, cfg, model)


class DecodeStage(Stage):
    name = STAGE.DECODE.value
    requires = (FEATURES_ARTIFACT, CSLR_ARTIFACT, CODEBOOK_ARTIFACT)
    produces = (DECODE_ARTIFACT,)

    def _execute(self) -> dict:
        model, codebook = self._recognizer(), self._codebook()
        features = {k: v for k, v in self._features().items() if split_of(k) != SPLIT.TRAIN}
        items = list(features.items())

        start = time.time()
        results = parallel_map(lambda item: decode_latents(model, item[1], self.cfg.decoder), items, 'decode')
        elapsed = max(time.time() - start, 1e-9)

        lines = [decode_to_json(sid, result, codebook) for (sid, _), result in zip(items, results)]
        self.ctx.path(DECODE_ARTIFACT).write_text(''.join(f'{line}\n' for line in lines), encoding = 'utf-8')

        frames = sum(seq.length for _, seq in items)
        empty = sum(r.empty for r in results)

        if empty:
            utils.print_warning(f'{empty} of {len(items)} utterances decoded to an empty gloss sequence')

        return {'utterances': len(items), 'empty': empty, 'frames': frames,
                'frames_per_second': frames / elapsed}


class EvalStage(Stage):
    name = STAGE.EVAL.value
    requires = (CORPUS_ARTIFACT, CODEBOOK_ARTIFACT, DECODE_ARTIFACT, CSLR_ARTIFACT)
    produces = (REPORT_ARTIFACT,)

    def _execute(self) -> dict:
        codebook = self._codebook()
        references = {u.index: codebook.decode(u.glosses) for u in self._corpus()}
        hypotheses = {int(r['id']): r['glosses'] for r in utils.read_jsonl(self.ctx.path(DECODE_ARTIFACT))}
        rows = []

        for split in (SPLIT.DEV, SPLIT.TEST):
            ids = sorted(i for i in hypotheses if split_of(i) == split)
            if not ids:
                continue
            report = evaluate([hypotheses[i] for i in ids], [references[i] for i in ids])
            rows.append(report.row(split.value))
            utils.print_val(f'{split.value} WER', f'{report.wer:.4f}')

        write_report(self.ctx.path(REPORT_ARTIFACT), rows)
        summary = {'report': rows}

        if self.cfg.pipeline.ablation:
            summary['ablation'] = self._ablate()

        return summary

    def _ablate(self) -> list[dict]:
        for name in (STAGE1_ARTIFACT, STAGE2_ARTIFACT):
            if not self.ctx.path(name).exists():
                raise DependencyError(f'modality ablation needs {name} in {self.ctx.out}')

        stage1, stage2, model = self._stage1(), self._stage2(), self._recognizer()
        test = [u for u in self._corpus() if u.split == SPLIT.TEST]
        rows = [{'track': 'none', 'wer': ablate_modality(stage1, stage2, model, test, self.cfg, None)}]

        for track in TRACKS:
            wer = ablate_modality(stage1, stage2, model, test, self.cfg, track.value)
            rows.append({'track': track.value, 'wer': wer})
            utils.print_val(f'without {track.value}', f'{wer:.4f}')

        write_ablation(self.ctx.path(ABLATION_ARTIFACT), rows)
        return rows


def ablate_modality(stage1: Stage1Model, stage2: Vid2PoseModel, model: Recognizer, utterances: Sequence[Utterance],
                    cfg: RunConfig, track: TRACK | str | None) -> float:
    """
    Test WER with one predicted track zeroed (confidence 0); None runs the unablated path.
    """
    track = TRACK(track).value if track is not None else None
    hyps, refs = [], []

    for u in utterances:
        latent = compile_sequence(extract_latents(stage1, stage2, u, track), _no_drop(cfg.compile), stream = u.index)
        hyps.append(decode_latents(model, latent, cfg.decoder).glosses)
        refs.append(u.glosses)

    return evaluate(hyps, refs).wer


class PruneReportStage(Stage):
    name = PRUNE_REPORT_STAGE
    requires = (FEATURES_ARTIFACT, STAGE1_ARTIFACT, CODEBOOK_ARTIFACT)
    produces = (PRUNE_REPORT_ARTIFACT,)

    def _execute(self) -> dict:
        train = list(self._features(SPLIT.TRAIN).values())
        threshold = self.cfg.recognizer.prune_threshold
        rows = prune_report(train, threshold)

        stage1 = self._stage1()
        importance = {track: float(np.abs(encoder.first.weight.data).mean(axis = 1).sum()) for track, encoder in stage1.encoders.items()}
        write_prune_report(self.ctx.path(PRUNE_REPORT_ARTIFACT), rows, importance)

        kept = sum(r['kept'] for r in rows)
        utils.print_val('Effective width', f'{kept}/{len(rows)}')
        return {'threshold': threshold, 'width': len(rows), 'effective_width': kept}

    def _can_skip(self) -> bool:
        return False


# ------------------------------
#    PIPELINE
# ------------------------------

STAGE_CLASSES: dict[str, type[Stage]] = {
    STAGE.SYNTH.value        : SynthStage,
    STAGE.TRAIN_STAGE1.value : Stage1Stage,
    STAGE.TRAIN_STAGE2.value : Stage2Stage,
    STAGE.COMPILE.value      : CompileStage,
    STAGE.AUGMENT.value      : AugmentStage,
    STAGE.TRAIN_CSLR.value   : CSLRStage,
    STAGE.DECODE.value       : DecodeStage,
    STAGE.EVAL.value         : EvalStage,
    PRUNE_REPORT_STAGE       : PruneReportStage,
}

PIPELINE_ORDER = [stage.value for stage in STAGE]

def run_pipeline(config: RunConfig, selector: str, out: str | Path, resume: bool = False) -> list[dict]:
    """
    Run one stage, or every stage in order when selector is 'pipeline'.

    Args:
        config (RunConfig): Validated run configuration.
        selector (str): A stage name, 'prune-report' or 'pipeline'.
        out (str | Path): Artifact directory (created if missing).
        resume (bool): Skip completed stages and continue CSLR training from its last checkpoint.

    Returns:
        list[dict]: Summaries of the stages that ran.
    """

    ctx = PipelineContext(config, Path(out), resume)
    ctx.out.mkdir(parents = True, exist_ok = True)
    names = PIPELINE_ORDER if selector == 'pipeline' else [selector]
    summaries = []

    for name in names:
        if name not in STAGE_CLASSES:
            raise ParameterError(f'unknown stage {name!r}')
        summaries.append(STAGE_CLASSES[name](ctx).run())

    return summaries

