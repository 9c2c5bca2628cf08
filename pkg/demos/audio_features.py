"""Audio front end walkthrough: wav io, chunking, log-mel features.

Synthesizes a short utterance, saves it as 16-bit PCM, reads it back,
cuts it into two-second chunks and prints the feature grid each chunk
produces. Run from the repository root:

    python3 demos/audio_features.py
"""

from pathlib import Path

import numpy as np

from gesturegen import synth
from gesturegen.audio import ChunkAssembler, MelConfig, load_wav, mel_features, save_wav

OUT = Path(__file__).resolve().parent.parent / "demo_out"


def main():
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(0)
    rate = 16000
    # three independent utterances back to back, 6 s total
    samples = np.concatenate(
        [synth.render_audio(synth.draw_score(rng), 2 * rate, rate) for _ in range(3)]
    )
    wav_path = OUT / "utterance.wav"
    save_wav(wav_path, samples, rate)
    back, back_rate = load_wav(wav_path)
    print(f"wrote {wav_path} ({samples.size} samples at {rate} Hz)")
    print(f"pcm round trip max error: {np.abs(back - samples).max():.2e}")

    mel = MelConfig()
    assembler = ChunkAssembler(rate, chunk_seconds=2.0)
    # feed in uneven blocks, the way a microphone callback would
    chunks = []
    at = 0
    for size in (5000, 26999, 32001, 30000, 2000):
        chunks += assembler.feed(back[at : at + size])
        at += size
    chunks += assembler.feed(back[at:])
    tail = assembler.flush()
    if tail is not None:
        chunks.append(tail)

    for chunk in chunks:
        feats = mel_features(chunk, mel)
        lo, hi = feats.data.min(), feats.data.max()
        tag = " (padded)" if chunk.padded else ""
        print(f"chunk {chunk.index}: {chunk.samples.size} samples -> "
              f"{feats.data.shape} features, range [{lo:.1f}, {hi:.1f}]{tag}")

    # a crude spectrogram sketch of the first chunk, low bands at the bottom
    feats = mel_features(chunks[0], mel).data
    cells = " .:-=+*#"
    span = feats.max() - feats.min()
    rows = []
    for band in range(feats.shape[1] - 8, -1, -8):
        col = feats[::12, band]
        level = ((col - feats.min()) / span * (len(cells) - 1)).astype(int)
        rows.append("".join(cells[v] for v in level))
    print("\nlog-mel sketch (time right, frequency up):")
    print("\n".join(rows))


if __name__ == "__main__":
    main()
