"""Toy self-supervised training with periodic held-out direction error.

    python scripts/toy_training.py --set steps=2000 --every 250 --out runs/toy
"""

import argparse
import time
from pathlib import Path

import numpy as np

from posedepth import io as pio
from posedepth.config import RunConfig
from posedepth.training import Models, heldout_snippets, train, training_snippets, translation_direction_errors


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--every", type=int, default=250, help="held-out evaluation interval")
    parser.add_argument("--out", default="runs/toy")
    args = parser.parse_args()

    config = RunConfig().update(dict(kv.split("=", 1) for kv in args.set)).validate()
    snippets, held = training_snippets(config), heldout_snippets(config)
    models = Models.build(config)
    start = time.perf_counter()

    def heldout(label):
        errors = translation_direction_errors(models, held)
        print(f"{label} direction median={np.median(errors):.1f}deg "
              f"prev_ref={np.median(errors[0::2]):.1f} next_ref={np.median(errors[1::2]):.1f}", flush=True)

    recent = []

    def progress(step, report):
        recent.append(report.photometric)
        if (step + 1) % args.every == 0:
            print(f"step {step + 1} photometric={np.mean(recent[-args.every:]):.4f} "
                  f"elapsed={time.perf_counter() - start:.0f}s", flush=True)
            heldout(f"step {step + 1}")

    heldout("init")
    train(config, snippets, models, progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pio.save_checkpoint(out / "checkpoint.scpd", models.named_state())
    (out / "config.txt").write_text(config.to_text())


if __name__ == "__main__":
    main()
