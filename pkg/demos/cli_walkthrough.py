"""Every CLI subcommand in sequence, driving one tiny experiment.

Equivalent shell commands are printed before each step; the script calls
the same entry point the `gesturegen` console command uses.

    python3 demos/cli_walkthrough.py
"""

import shlex
from pathlib import Path

from gesturegen.cli import dispatch

OUT = Path(__file__).resolve().parent.parent / "demo_out" / "cli"


def run(argv):
    print(f"\n$ gesturegen {' '.join(shlex.quote(a) for a in argv)}")
    code = dispatch(argv)
    print(f"[exit {code}]")
    assert code == 0, f"step failed with exit code {code}"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    data = OUT / "data"
    ckpt = OUT / "model.ckpt"

    run(["synth-data", "--seed", "7", "--pairs", "12", "--out", str(data)])
    run(["train", "--data", str(data), "--checkpoint", str(ckpt),
         "--log", str(OUT / "metrics.jsonl"), "--epochs", "4",
         "--gen-widths", "8,16", "--disc-widths", "8"])
    run(["eval", "--checkpoint", str(ckpt), "--data", str(data)])
    run(["retarget", "--poses", str(data / "s0.pose"),
         "--out", str(OUT / "s0.bvh")])
    run(["stream", "--wav", str(data / "s0.wav"), "--checkpoint", str(ckpt),
         "--sink", str(OUT / "frames.bin"), "--virtual", "--json-lines"])

    # a config file carrying the shared settings; flags still win
    cfg = OUT / "train.cfg"
    cfg.write_text(
        "data = {}\ncheckpoint = {}\nepochs = 4\n"
        "gen-widths = 8,16\ndisc-widths = 8\n".format(data, OUT / "model2.ckpt"),
        encoding="utf-8",
    )
    run(["train", "--config", str(cfg), "--epochs", "2"])


if __name__ == "__main__":
    main()
