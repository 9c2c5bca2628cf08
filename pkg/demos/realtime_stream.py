"""The chunked realtime pipeline, simulated and then truly live.

First runs on the virtual clock (instant, deterministic) with a fixed
70 ms inference stub to show the delay budget, then replays four seconds
of audio in real time, pacing frames at 15 per second. If the training
demo left a checkpoint in demo_out/, its generator is used for the live
leg; otherwise the stub stands in.

    python3 demos/realtime_stream.py
"""

import time
from pathlib import Path

import numpy as np

from gesturegen import synth
from gesturegen.audio import save_wav
from gesturegen.checkpoint import load_checkpoint
from gesturegen.pose import upper_body_rest_pose
from gesturegen.stream import (
    CheckpointPredictor,
    ConstantPosePredictor,
    RealClock,
    StreamConfig,
    VirtualClock,
    replay_source,
    run_pipeline,
)

OUT = Path(__file__).resolve().parent.parent / "demo_out"


def make_wav(path, seconds, seed):
    rng = np.random.default_rng(seed)
    rate = 16000
    n = int(seconds / 2)
    samples = np.concatenate(
        [synth.render_audio(synth.draw_score(rng), 2 * rate, rate) for _ in range(n)]
    )
    save_wav(path, samples, rate)
    return path


def main():
    OUT.mkdir(exist_ok=True)
    config = StreamConfig()
    rest = np.tile(upper_body_rest_pose(), (config.frames_per_chunk, 1, 1))

    wav = make_wav(OUT / "stream_10s.wav", 10.0, 5)
    stub = ConstantPosePredictor(rest, inference_seconds=0.070)
    clock = VirtualClock()
    report = run_pipeline(replay_source(wav, clock), stub, lambda m: None,
                          config=config, clock=clock)
    print("virtual clock, 70 ms stub:")
    for c in report.chunks:
        print(f"  chunk {c.chunk_id}: capture {c.capture_complete:6.2f} s  "
              f"infer {c.inference_seconds * 1000:5.1f} ms  "
              f"total delay {c.total_delay:.3f} s")
    print(f"  mean total delay {report.mean_total_delay:.3f} s")

    ckpt_path = OUT / "micro.ckpt"
    if ckpt_path.exists():
        model = CheckpointPredictor(load_checkpoint(ckpt_path))
        print(f"\nlive leg uses {ckpt_path.name}")
    else:
        model = stub
        print(f"\nno {ckpt_path.name} yet (run demos/train_micro_gan.py); using the stub")

    wav = make_wav(OUT / "stream_4s.wav", 4.0, 6)
    times = []
    clock = RealClock()
    t0 = time.perf_counter()
    report = run_pipeline(replay_source(wav, clock), model,
                          lambda m: times.append(time.perf_counter()),
                          config=config, clock=clock)
    wall = time.perf_counter() - t0
    intervals = np.diff(times) * 1000
    on_pace = np.abs(intervals - 1000 / config.fps) <= 10.0
    print(f"real clock: {len(times)} frames in {wall:.2f} s wall")
    print(f"  frame spacing {intervals.mean():.1f} ms mean, "
          f"{on_pace.mean():.0%} within +-10 ms of {1000 / config.fps:.1f} ms")
    print(f"  mean total delay {report.mean_total_delay:.3f} s, "
          f"stalls {len(report.stalls)}")


if __name__ == "__main__":
    main()
