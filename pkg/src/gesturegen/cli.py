"""Command line front end binding the library's pipelines together.

Five subcommands: synth-data, train, eval, retarget, stream. Every option
can also come from a config file of `key = value` lines (keys are the long
flag names without the dashes); explicit flags always override the file.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .animate import apply_constraints, keypoints_to_rotations, smooth
from .audio import save_wav
from .bvh import export_bvh
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import GestureGenError
from .model import DiscriminatorConfig, GeneratorConfig
from .pose import PoseFileError, PoseSequence, upper_body_rest_pose, write_pose_file
from .pose import read_pose_file
from .stream import (
    CheckpointPredictor,
    ConstantPosePredictor,
    FileSink,
    RealClock,
    StreamConfig,
    TcpSink,
    VirtualClock,
    replay_source,
    run_pipeline,
)
from .train import (
    DatasetError,
    TrainConfig,
    build_dataset,
    evaluate,
    synth_recordings,
    train,
)


class UsageError(GestureGenError):
    """Bad invocation: unknown flag or key, missing or malformed option."""


def _int(raw: str) -> int:
    return int(raw)


def _float(raw: str) -> float:
    return float(raw)


def _widths(raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of layer widths")
    return tuple(int(p) for p in parts)


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


@dataclass(frozen=True)
class _Option:
    """One setting: a long flag and, under the same name, a config-file key."""

    name: str
    parse: object = str
    default: object = None
    required: bool = False
    flag: bool = False          # presence-only switch, no value on the command line
    help: str = ""


_COMMON = (
    _Option("json-lines", flag=True, default=False,
            help="emit one JSON record per reporting event instead of text"),
)

_TABLES = {
    "synth-data": (
        _Option("seed", _int, default=0, help="RNG seed for the corpus"),
        _Option("pairs", _int, required=True, help="number of two-second pairs"),
        _Option("out", required=True, help="output directory for recordings"),
        _Option("speakers", _int, default=4, help="speakers to cycle through"),
    ) + _COMMON,
    "train": (
        _Option("data", required=True, help="directory of paired .wav/.pose recordings"),
        _Option("checkpoint", required=True, help="where to write the trained model"),
        _Option("log", help="optional metrics log, one JSON line per epoch"),
        _Option("seed", _int, default=0),
        _Option("epochs", _int, default=40),
        _Option("batch-size", _int, default=4),
        _Option("lr-g", _float, default=0.02, help="generator learning rate"),
        _Option("lr-d", _float, default=0.001, help="discriminator learning rate"),
        _Option("momentum", _float, default=0.9),
        _Option("lambda-bone", _float, default=0.5, help="bone-length loss weight"),
        _Option("val-frac", _float, default=0.1, help="held-out fraction per source"),
        _Option("gen-widths", _widths, default=(32, 64, 128),
                help="generator encoder widths, comma separated"),
        _Option("disc-widths", _widths, default=(32, 64),
                help="discriminator widths, comma separated"),
    ) + _COMMON,
    "eval": (
        _Option("checkpoint", required=True, help="trained model to score"),
        _Option("data", required=True, help="directory of paired .wav/.pose recordings"),
        _Option("alpha", _float, default=0.2, help="PCK distance threshold"),
    ) + _COMMON,
    "retarget": (
        _Option("poses", required=True, help="keypoint track to retarget (.pose)"),
        _Option("out", required=True, help="output animation file (.bvh)"),
        _Option("smooth-window", _int, default=5,
                help="odd moving-average window; 1 disables smoothing"),
        _Option("no-limits", flag=True, default=False,
                help="skip joint-limit clamping"),
    ) + _COMMON,
    "stream": (
        _Option("wav", required=True, help="audio to replay as the live source"),
        _Option("checkpoint", help="trained model to run per chunk"),
        _Option("stub-ms", _float,
                help="fixed-cost rest-pose predictor instead of a model"),
        _Option("sink", required=True,
                help="frame destination: a file path or tcp:HOST:PORT"),
        _Option("virtual", flag=True, default=False,
                help="simulate on a virtual clock instead of running live"),
    ) + _COMMON,
}

_SUMMARIES = {
    "synth-data": "write a deterministic synthetic corpus of recordings",
    "train": "fit the gesture GAN on a directory of recordings",
    "eval": "score a checkpoint's PCK on a dataset",
    "retarget": "solve a keypoint track into a skeletal animation file",
    "stream": "run the realtime chunk-to-pose pipeline over a wav file",
}


@dataclass(frozen=True)
class RunConfig:
    """A subcommand plus its fully merged settings; nothing unresolved."""

    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gesturegen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for command, table in _TABLES.items():
        p = sub.add_parser(command, help=_SUMMARIES[command])
        p.add_argument("--config", default=None, metavar="FILE",
                       help="key = value file supplying defaults for any option")
        for opt in table:
            dest = opt.name.replace("-", "_")
            if opt.flag:
                p.add_argument(f"--{opt.name}", dest=dest, action="store_true",
                               default=None, help=opt.help or None)
            else:
                p.add_argument(f"--{opt.name}", dest=dest, default=None,
                               metavar=opt.name.upper().replace("-", "_"),
                               help=opt.help or None)
    return parser


def read_config_file(path) -> dict:
    """Parse `key = value` lines; # starts a comment, blank lines skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def _resolve(command: str, args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config-file values, and flags; flags win."""
    table = _TABLES[command]
    known = {opt.name for opt in table}
    file_values = read_config_file(args.config) if args.config else {}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise UsageError(
            f"unknown config key{'s' if len(unknown) > 1 else ''} for "
            f"{command}: {', '.join(unknown)}"
        )
    values = {}
    for opt in table:
        given = getattr(args, opt.name.replace("-", "_"))
        if given is not None:
            value = True if opt.flag else _parse_value(opt, given)
        elif opt.name in file_values:
            value = _parse_value(opt, file_values[opt.name], in_file=True)
        elif opt.required:
            raise UsageError(f"{command}: missing required option --{opt.name}")
        else:
            value = opt.default
        values[opt.name] = value
    return RunConfig(command=command, values=values)


def _parse_value(opt: _Option, raw: str, in_file: bool = False):
    parse = _bool if opt.flag else opt.parse
    try:
        return parse(raw)
    except (ValueError, TypeError) as err:
        where = "config key" if in_file else "option"
        raise UsageError(f"bad value for {where} {opt.name!r}: {err}") from err


def parse_args(argv) -> RunConfig:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a subcommand is required")
    return _resolve(args.command, args)


# ----------------------------------------------------------------- reporting


class _Reporter:
    """Prints either human lines or JSON records, never both."""

    def __init__(self, json_lines: bool):
        self.json_lines = json_lines

    def __call__(self, record: dict, text: str) -> None:
        if self.json_lines:
            print(json.dumps(record))
        else:
            print(text)


def _epoch_text(record: dict) -> str:
    line = (f"epoch {record['epoch']:3d}  d_loss {record['d_loss']:.4f}  "
            f"g_l1 {record['g_l1']:.4f}  g_bone {record['g_bone']:.4f}  "
            f"g_adv {record['g_adv']:.4f}")
    if record.get("val_pck") is not None:
        line += f"  val_pck {record['val_pck']:.2f}"
    return line


# ---------------------------------------------------------------- subcommands


def _recording_paths(data_dir):
    root = Path(data_dir)
    wavs = sorted(root.glob("*.wav"))
    if not wavs:
        raise DatasetError(f"no .wav recordings in {root}")
    poses = [w.with_suffix(".pose") for w in wavs]
    for p in poses:
        if not p.exists():
            raise DatasetError(f"{p} is missing for {p.with_suffix('.wav')}")
    return wavs, poses, [w.stem for w in wavs]


def _load_recordings(data_dir):
    wavs, poses, speakers = _recording_paths(data_dir)
    return build_dataset(wavs, poses, speakers=speakers)


def _cmd_synth_data(run: RunConfig, report: _Reporter) -> None:
    out_dir = Path(run["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings = synth_recordings(run["seed"], run["pairs"], n_speakers=run["speakers"])
    for speaker, samples, frames in recordings:
        wav_path = out_dir / f"{speaker}.wav"
        pose_path = out_dir / f"{speaker}.pose"
        save_wav(wav_path, samples, 16000)
        write_pose_file(pose_path, PoseSequence(frames, 15.0))
        chunks = len(frames) // 30
        report({"event": "wrote", "speaker": speaker, "wav": str(wav_path),
                "pose": str(pose_path), "chunks": chunks},
               f"{speaker}: {chunks} chunks -> {wav_path}")
    report({"event": "done", "pairs": run["pairs"], "speakers": len(recordings),
            "dir": str(out_dir)},
           f"wrote {run['pairs']} pairs across {len(recordings)} speakers in {out_dir}")


def _cmd_train(run: RunConfig, report: _Reporter) -> None:
    try:
        config = TrainConfig(
            generator=GeneratorConfig(widths=run["gen-widths"]),
            discriminator=DiscriminatorConfig(widths=run["disc-widths"]),
            epochs=run["epochs"],
            batch_size=run["batch-size"],
            lr_g=run["lr-g"],
            lr_d=run["lr-d"],
            momentum=run["momentum"],
            lambda_bone=run["lambda-bone"],
            seed=run["seed"],
            val_fraction=run["val-frac"],
        )
    except ValueError as err:
        raise UsageError(str(err)) from err
    dataset = _load_recordings(run["data"])
    checkpoint = train(
        dataset, config, log_path=run["log"],
        on_epoch=lambda record: report(record, _epoch_text(record)),
    )
    save_checkpoint(checkpoint, run["checkpoint"])
    report({"event": "saved", "checkpoint": run["checkpoint"],
            "epochs": config.epochs, "pairs": len(dataset)},
           f"saved {run['checkpoint']} after {config.epochs} epochs "
           f"on {len(dataset)} pairs")


def _cmd_eval(run: RunConfig, report: _Reporter) -> None:
    if run["alpha"] <= 0:
        raise UsageError(f"--alpha must be positive, got {run['alpha']:g}")
    checkpoint = load_checkpoint(run["checkpoint"])
    dataset = _load_recordings(run["data"])
    result = evaluate(checkpoint, dataset, alpha=run["alpha"])
    report({"event": "eval", "alpha": result.alpha, "pck": result.mean_pck,
            "pairs": len(dataset), "per_speaker": result.per_speaker},
           f"pck@{result.alpha:.2f} = {result.mean_pck:.2f}")


def _cmd_retarget(run: RunConfig, report: _Reporter) -> None:
    window = run["smooth-window"]
    if window < 1 or window % 2 == 0:
        raise UsageError(f"--smooth-window must be odd and positive, got {window}")
    data = read_pose_file(run["poses"])
    if data.has_gaps:
        raise PoseFileError(
            f"{run['poses']} has gaps; retargeting needs a contiguous track"
        )
    clip = keypoints_to_rotations(PoseSequence(data.frames, data.fps))
    if not run["no-limits"]:
        clip = apply_constraints(clip)
    if window > 1:
        clip = smooth(clip, window)
    export_bvh(clip, run["out"])
    report({"event": "wrote", "out": run["out"], "frames": len(data.frames),
            "fps": data.fps},
           f"wrote {run['out']}: {len(data.frames)} frames at {data.fps:g} fps")


def _cmd_stream(run: RunConfig, report: _Reporter) -> None:
    if (run["checkpoint"] is None) == (run["stub-ms"] is None):
        raise UsageError("stream needs exactly one of --checkpoint and --stub-ms")
    config = StreamConfig()
    if run["checkpoint"] is not None:
        model = CheckpointPredictor(load_checkpoint(run["checkpoint"]))
    else:
        rest = np.tile(upper_body_rest_pose(), (config.frames_per_chunk, 1, 1))
        model = ConstantPosePredictor(rest, inference_seconds=run["stub-ms"] / 1000.0)
    clock = VirtualClock() if run["virtual"] else RealClock()
    sink_spec = run["sink"]
    if sink_spec.startswith("tcp:"):
        _, _, rest_spec = sink_spec.partition(":")
        host, sep, port = rest_spec.rpartition(":")
        if not sep or not host:
            raise UsageError(f"sink {sink_spec!r} is not of the form tcp:HOST:PORT")
        try:
            sink = TcpSink(host, int(port))
        except ValueError as err:
            raise UsageError(f"bad port in sink {sink_spec!r}: {err}") from err
    else:
        sink = FileSink(sink_spec)
    with sink:
        result = run_pipeline(replay_source(run["wav"], clock), model, sink,
                              config=config, clock=clock)
    if result.chunks:
        text = (f"{len(result.chunks)} chunks, mean delay "
                f"{result.mean_total_delay:.3f} s, max "
                f"{result.max_total_delay:.3f} s, {len(result.stalls)} stalls")
    else:
        text = "no full chunks played"
    report({"event": "latency", "chunks": len(result.chunks),
            "mean_total_delay": result.mean_total_delay,
            "max_total_delay": result.max_total_delay,
            "stalls": len(result.stalls)}, text)


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "retarget": _cmd_retarget,
    "stream": _cmd_stream,
}


def dispatch(argv) -> int:
    """Run one invocation; returns the process exit code instead of exiting."""
    try:
        run = parse_args(argv)
    except SystemExit as exc:       # argparse --help
        return 0 if exc.code in (0, None) else 1
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 1
    try:
        _COMMANDS[run.command](run, _Reporter(run["json-lines"]))
    except UsageError as err:
        print(f"gesturegen {run.command}: error: {err}", file=sys.stderr)
        return 1
    except (GestureGenError, OSError) as err:
        print(f"gesturegen {run.command}: error: {err}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
