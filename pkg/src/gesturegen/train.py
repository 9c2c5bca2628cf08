"""Adversarial training of the speech-to-gesture generator.

Covers dataset assembly (paired WAV + pose files, or the procedural
corpus), the alternating discriminator/generator update loop, per-epoch
metric logging as JSON lines, and PCK evaluation reports.

The discriminator sees frame-to-frame motion deltas, not absolute poses,
which pushes the generator away from frozen mean-pose output. One update
cycle per batch: a discriminator step on real-vs-generated motion, then a
generator step on L1 + bone smoothness + the adversarial term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .audio import FeatureSequence, MelConfig, chunk_stream, load_wav, mel_features, resample
from .checkpoint import Checkpoint
from .errors import GestureGenError
from .model import (
    DiscriminatorConfig,
    GanParams,
    GeneratorConfig,
    GeneratorParams,
    generator_forward,
    generator_loss_terms,
    discriminator_forward,
    init_gan_params,
    rows_from_frames,
    frames_from_rows,
    validate_lambda_bone,
)
from .numeric import Graph, MomentumSGD, Tensor
from .numeric.ops import add, bce_with_logits, scale, time_diff
from .pose import (
    PoseSequence,
    SkeletonTopology,
    interpolate_frames,
    normalize_pose,
    pck,
    read_pose_file,
    upper_body_skeleton,
)


class DatasetError(GestureGenError):
    """Audio and pose material cannot be assembled into training pairs."""


class TrainingDivergedError(GestureGenError):
    """A loss term became non-finite; names the term and the step."""


@dataclass
class TrainingPair:
    """One two-second speech chunk with its normalized target motion."""

    features: FeatureSequence
    target: PoseSequence
    speaker: str
    source: str

    def __post_init__(self):
        if len(self.target) < 2:
            raise DatasetError("a training pair needs at least 2 target frames")


@dataclass(frozen=True)
class TrainConfig:
    """Everything the training loop needs besides the data itself."""

    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    epochs: int = 30
    batch_size: int = 4
    lr_g: float = 0.02
    lr_d: float = 0.001
    momentum: float = 0.9
    lambda_bone: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        validate_lambda_bone(self.lambda_bone)
        if self.generator.keypoints != self.discriminator.keypoints:
            raise ValueError("generator and discriminator keypoint counts differ")


def train_config_from_dict(d: dict) -> TrainConfig:
    """Rebuild a TrainConfig from the plain-dict form stored in checkpoints."""
    kwargs = dict(d)
    gen = dict(kwargs.pop("generator"))
    disc = dict(kwargs.pop("discriminator"))
    gen["widths"] = tuple(gen["widths"])
    disc["widths"] = tuple(disc["widths"])
    return TrainConfig(
        generator=GeneratorConfig(**gen), discriminator=DiscriminatorConfig(**disc), **kwargs
    )


# ------------------------------------------------------------------ datasets


def synth_dataset(seed: int, n_pairs: int, *, n_speakers: int = 4,
                  mel: MelConfig | None = None, fps: float = 15.0) -> list[TrainingPair]:
    """Deterministic procedural corpus; same seed gives bit-identical pairs.

    Each pair is an independent utterance from one shared random stream, so
    a length-n dataset is a prefix of every longer dataset with the same
    seed. Speakers cycle round-robin; the source id carries the seed.
    """
    if n_pairs < 1:
        raise DatasetError(f"need at least 1 pair, got {n_pairs}")
    if n_speakers < 1:
        raise DatasetError(f"need at least 1 speaker, got {n_speakers}")
    mel = mel or MelConfig()
    chunk_seconds = 2.0
    n_samples = int(round(chunk_seconds * mel.sample_rate))
    n_frames = int(round(chunk_seconds * fps))
    rng = np.random.default_rng(seed)
    skeleton = upper_body_skeleton()
    pairs = []
    for i in range(n_pairs):
        score = synth.draw_score(rng)
        samples = synth.render_audio(score, n_samples, mel.sample_rate)
        features = mel_features(samples, mel)
        features.chunk_index = i
        frames = synth.render_pose(score, n_frames, fps)
        target = normalize_pose(frames, fps, skeleton)
        pairs.append(
            TrainingPair(
                features=features,
                target=target,
                speaker=f"s{i % n_speakers}",
                source=f"synth-{seed}",
            )
        )
    return pairs


def synth_recordings(seed: int, n_pairs: int, *, n_speakers: int = 4,
                     sample_rate: int = 16000, fps: float = 15.0):
    """The synth_dataset corpus as whole recordings, one per speaker.

    Returns (speaker, samples, pose_frames) tuples. Written to disk and cut
    back apart by build_dataset, the recordings reproduce
    synth_dataset(seed, n_pairs) bit for bit: the score draw order is the
    same, and chunk boundaries land exactly on the concatenation seams.
    """
    if n_pairs < 1:
        raise DatasetError(f"need at least 1 pair, got {n_pairs}")
    if n_speakers < 1:
        raise DatasetError(f"need at least 1 speaker, got {n_speakers}")
    chunk_seconds = 2.0
    n_samples = int(round(chunk_seconds * sample_rate))
    n_frames = int(round(chunk_seconds * fps))
    rng = np.random.default_rng(seed)
    by_speaker: dict[str, list] = {}
    for i in range(n_pairs):
        score = synth.draw_score(rng)
        samples = synth.render_audio(score, n_samples, sample_rate)
        frames = synth.render_pose(score, n_frames, fps)
        by_speaker.setdefault(f"s{i % n_speakers}", []).append((samples, frames))
    return [
        (speaker, np.concatenate([s for s, _ in parts]), np.concatenate([f for _, f in parts]))
        for speaker, parts in by_speaker.items()
    ]


def _contiguous_spans(indices: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (first, last) index runs with no gaps inside."""
    breaks = np.nonzero(np.diff(indices) != 1)[0]
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [indices.size - 1]))
    return [(int(indices[s]), int(indices[e])) for s, e in zip(starts, ends)]


def build_dataset(audio_paths, pose_paths, skeleton: SkeletonTopology | None = None, *,
                  mel: MelConfig | None = None, target_fps: float = 15.0,
                  speakers=None) -> list[TrainingPair]:
    """Cut paired recordings into aligned two-second training pairs.

    audio_paths and pose_paths run in parallel, one recording per index.
    Pose tracks are resampled to target_fps by linear interpolation; chunks
    whose pose coverage is incomplete (gaps, or track shorter than the
    audio) are dropped, as is a padded final audio chunk.
    """
    if len(audio_paths) != len(pose_paths):
        raise DatasetError(
            f"{len(audio_paths)} audio files but {len(pose_paths)} pose files"
        )
    if len(audio_paths) == 0:
        raise DatasetError("no recordings given")
    if speakers is not None and len(speakers) != len(audio_paths):
        raise DatasetError("speakers must match the number of recordings")
    mel = mel or MelConfig()
    skeleton = skeleton or upper_body_skeleton()
    chunk_seconds = 2.0
    n_frames = int(round(chunk_seconds * target_fps))
    pairs = []
    for rec, (wav_path, pose_path) in enumerate(zip(audio_paths, pose_paths)):
        samples, rate = load_wav(wav_path)
        if rate != mel.sample_rate:
            samples = resample(samples, rate, mel.sample_rate)
        pose_data = read_pose_file(pose_path)   # rejects empty files itself
        if pose_data.frames.shape[1] != skeleton.n_keypoints:
            raise DatasetError(
                f"{pose_path}: {pose_data.frames.shape[1]} keypoints, "
                f"skeleton has {skeleton.n_keypoints}"
            )
        if pose_data.fps < target_fps:
            raise DatasetError(
                f"{pose_path}: {pose_data.fps} fps is below the {target_fps} fps target"
            )
        spans = _contiguous_spans(pose_data.indices)
        row_of = {int(idx): row for row, idx in enumerate(pose_data.indices)}
        source = Path(wav_path).stem
        speaker = speakers[rec] if speakers is not None else source
        made_any = False
        for chunk in chunk_stream(samples, mel.sample_rate, chunk_seconds):
            if chunk.padded:
                continue
            start = chunk.index * chunk_seconds
            # source-track positions of the frames this chunk needs; the
            # ratio form keeps integer-multiple rates exact (no reround)
            positions = start * pose_data.fps + np.arange(n_frames) * (
                pose_data.fps / target_fps
            )
            lo, hi = math.floor(positions[0]), math.ceil(positions[-1])
            if not any(first <= lo and hi <= last for first, last in spans):
                continue
            base = row_of[lo]
            local = positions - lo
            frames = interpolate_frames(
                pose_data.frames[base : base + (hi - lo) + 1], local
            )
            target = normalize_pose(frames, target_fps, skeleton)
            features = mel_features(chunk, mel)
            pairs.append(
                TrainingPair(features=features, target=target, speaker=speaker, source=source)
            )
            made_any = True
        if not made_any:
            raise DatasetError(
                f"{wav_path} and {pose_path} share no fully covered two-second span"
            )
    return pairs


def validation_split(pairs, val_fraction: float = 0.1):
    """(train, val) split: the last val_fraction of each source, in order.

    Never shuffles across the boundary, so validation chunks are the tail
    of each recording. Sources too short to donate a pair stay train-only.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    counts: dict[str, int] = {}
    for p in pairs:
        counts[p.source] = counts.get(p.source, 0) + 1
    n_val = {src: int(n * val_fraction) for src, n in counts.items()}
    seen: dict[str, int] = {}
    train, val = [], []
    for p in pairs:
        seen[p.source] = seen.get(p.source, 0) + 1
        if seen[p.source] > counts[p.source] - n_val[p.source]:
            val.append(p)
        else:
            train.append(p)
    return train, val


def mean_pose_frames(pairs, n_frames: int) -> np.ndarray:
    """[n_frames, K, 3] constant sequence: the average target keypoints."""
    if not pairs:
        raise DatasetError("cannot average an empty dataset")
    total = np.zeros(pairs[0].target.frames.shape[1:], dtype=np.float64)
    count = 0
    for p in pairs:
        total += p.target.frames.sum(axis=0, dtype=np.float64)
        count += len(p.target)
    mean = (total / count).astype(np.float32)
    return np.broadcast_to(mean, (n_frames,) + mean.shape).copy()


def mean_pose_baseline(train_pairs, val_pairs, alpha: float = 0.2) -> float:
    """PCK of the constant mean-pose predictor, the no-motion reference."""
    if not val_pairs:
        raise DatasetError("no validation pairs to score")
    scores = []
    for p in val_pairs:
        const = mean_pose_frames(train_pairs, len(p.target))
        pred = PoseSequence(const, p.target.fps, p.target.skeleton)
        scores.append(pck(pred, p.target, alpha))
    return float(np.mean(scores))


# ------------------------------------------------------------------ training


def _label(logit: Tensor, value: float) -> Tensor:
    return Tensor(np.full(logit.data.shape, value, dtype=np.float32))


def _batch_mean(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def _check_finite(name: str, value: float, epoch: int, batch: int) -> float:
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"{name} became non-finite ({value}) at epoch {epoch}, batch {batch}"
        )
    return value


def train(dataset, config: TrainConfig, *, val_pairs=None, log_path=None,
          on_epoch=None) -> Checkpoint:
    """Run the full alternating-update loop; returns the final checkpoint.

    If val_pairs is None the dataset is split per validation_split; pass an
    explicit list (possibly empty) to override. Metric records carry epoch,
    d_loss, g_l1, g_bone, g_adv, minimax_value (the minimax game value,
    the negated discriminator loss) and val_pck; they are appended to
    log_path as JSON lines when given. Fixed seeds make the whole loop,
    including the log bytes, reproducible.
    """
    if not dataset:
        raise DatasetError("training dataset is empty")
    if val_pairs is None:
        train_pairs, val_pairs = validation_split(dataset, config.val_fraction)
    else:
        train_pairs = list(dataset)
    if not train_pairs:
        raise DatasetError("no training pairs left after the validation split")

    gen_cfg, disc_cfg = config.generator, config.discriminator
    feats = []
    real_rows = []
    for p in train_pairs:
        if p.features.data.shape != (gen_cfg.frames, gen_cfg.bands):
            raise DatasetError(
                f"pair features {p.features.data.shape}, generator expects "
                f"({gen_cfg.frames}, {gen_cfg.bands})"
            )
        if len(p.target) != gen_cfg.out_frames:
            raise DatasetError(
                f"pair has {len(p.target)} target frames, generator emits {gen_cfg.out_frames}"
            )
        feats.append(p.features.data)
        real_rows.append(rows_from_frames(p.target.frames))

    params = init_gan_params(gen_cfg, disc_cfg, config.seed)
    opt_g = MomentumSGD(config.lr_g, config.momentum)
    opt_d = MomentumSGD(config.lr_d, config.momentum)
    gen_tensors = params.gen.tensors()
    disc_tensors = params.disc.tensors()
    skeleton = train_pairs[0].target.skeleton

    history = []
    log_file = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = np.random.default_rng(config.seed + epoch).permutation(len(train_pairs))
            sums = {"d_loss": 0.0, "g_l1": 0.0, "g_bone": 0.0, "g_adv": 0.0}
            n_seen = 0
            for batch_no, at in enumerate(range(0, len(order), config.batch_size)):
                idx = order[at : at + config.batch_size]

                # discriminator step: real deltas up, generated deltas down
                fake_rows = [generator_forward(params.gen, feats[i]).data for i in idx]
                with Graph() as g:
                    d_terms = []
                    for i, fr in zip(idx, fake_rows):
                        real_logit = discriminator_forward(
                            params.disc, time_diff(Tensor(real_rows[i]))
                        )
                        fake_logit = discriminator_forward(
                            params.disc, time_diff(Tensor(fr))
                        )
                        d_terms.append(
                            add(
                                bce_with_logits(real_logit, _label(real_logit, 1.0)),
                                bce_with_logits(fake_logit, _label(fake_logit, 0.0)),
                            )
                        )
                    d_loss = _batch_mean(d_terms)
                    opt_d.step(disc_tensors, g.backward(d_loss, wrt=disc_tensors))
                d_val = _check_finite("d_loss", d_loss.item(), epoch, batch_no)

                # generator step: reconstruction + bone smoothness + fooling D
                with Graph() as g:
                    l1_terms, bone_terms, adv_terms = [], [], []
                    for i in idx:
                        pred = generator_forward(params.gen, feats[i])
                        l1, bone = generator_loss_terms(pred, Tensor(real_rows[i]), skeleton)
                        logit = discriminator_forward(params.disc, time_diff(pred))
                        l1_terms.append(l1)
                        bone_terms.append(bone)
                        adv_terms.append(bce_with_logits(logit, _label(logit, 1.0)))
                    g_l1 = _batch_mean(l1_terms)
                    g_bone = _batch_mean(bone_terms)
                    g_adv = _batch_mean(adv_terms)
                    g_total = add(add(g_l1, scale(g_bone, config.lambda_bone)), g_adv)
                    opt_g.step(gen_tensors, g.backward(g_total, wrt=gen_tensors))

                k = len(idx)
                sums["d_loss"] += d_val * k
                sums["g_l1"] += _check_finite("g_l1", g_l1.item(), epoch, batch_no) * k
                sums["g_bone"] += _check_finite("g_bone", g_bone.item(), epoch, batch_no) * k
                sums["g_adv"] += _check_finite("g_adv", g_adv.item(), epoch, batch_no) * k
                n_seen += k

            record = {
                "epoch": epoch,
                "d_loss": sums["d_loss"] / n_seen,
                "g_l1": sums["g_l1"] / n_seen,
                "g_bone": sums["g_bone"] / n_seen,
                "g_adv": sums["g_adv"] / n_seen,
                "minimax_value": -sums["d_loss"] / n_seen,
                "val_pck": _validation_pck(params.gen, val_pairs),
            }
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if on_epoch is not None:
                on_epoch(record)
    finally:
        if log_file is not None:
            log_file.close()

    return Checkpoint(
        params=params,
        train_config=json.loads(json.dumps(asdict(config))),
        epoch=config.epochs,
        history=history,
    )


def _validation_pck(gen: GeneratorParams, val_pairs, alpha: float = 0.2):
    if not val_pairs:
        return None
    scores = []
    for p in val_pairs:
        out = generator_forward(gen, p.features.data)
        pred = PoseSequence(frames_from_rows(out.data), p.target.fps, p.target.skeleton)
        scores.append(pck(pred, p.target, alpha))
    return float(np.mean(scores))


# ------------------------------------------------------------------ evaluation


@dataclass
class EvalReport:
    """PCK scores: overall mean, per pair in dataset order, per speaker."""

    alpha: float
    mean_pck: float
    per_pair: list
    per_speaker: dict


def evaluate(checkpoint: Checkpoint, dataset, alpha: float = 0.2) -> EvalReport:
    """Score a checkpoint on a dataset; pure in all arguments."""
    if not dataset:
        raise DatasetError("evaluation dataset is empty")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    per_pair = []
    by_speaker: dict[str, list] = {}
    for n, p in enumerate(dataset):
        out = generator_forward(checkpoint.params.gen, p.features.data)
        pred = PoseSequence(frames_from_rows(out.data), p.target.fps, p.target.skeleton)
        score = pck(pred, p.target, alpha)
        per_pair.append({"pair": n, "speaker": p.speaker, "source": p.source, "pck": score})
        by_speaker.setdefault(p.speaker, []).append(score)
    per_speaker = {s: float(np.mean(v)) for s, v in sorted(by_speaker.items())}
    return EvalReport(
        alpha=alpha,
        mean_pck=float(np.mean([r["pck"] for r in per_pair])),
        per_pair=per_pair,
        per_speaker=per_speaker,
    )
