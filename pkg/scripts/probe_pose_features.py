"""Linear probe: how much translation direction the untrained pose features already carry.

Ridge regression from pooled stage features to true translation, fitted on
training snippets and scored on held-out ones (median angle, degrees).
Compare with the direction error the photometric training loop reaches.
"""

import argparse

import numpy as np

from posedepth import tensor as T
from posedepth.config import RunConfig
from posedepth.networks import semantic_branch
from posedepth.training import Models, heldout_snippets, training_snippets


def pooled_features(models, snippets):
    net = models.posenet
    xs, ys = [], []
    with T.no_grad():
        for sn in snippets:
            frames = [T.Tensor(f) for f in sn.frames]
            depth = models.depthnet(frames[1])
            pyramids = net.equivariant(T.stack(frames, axis=0))
            feats = [[level[j] for level in pyramids] for j in range(3)]
            for ref, truth in zip((0, 2), sn.relative_poses):
                semantic = semantic_branch(net.semantic, frames[ref], frames[1])
                _, embeds = net.positional_embeddings(feats[ref], feats[1], depth, sn.intrinsics)
                states = net.inject(semantic, embeds)
                xs.append(np.concatenate([s.fused.data.mean(axis=(1, 2)) for s in states]))
                ys.append(truth.numpy().translation)
    return np.array(xs), np.array(ys)


def median_angle(pred, true):
    cos = (pred * true).sum(1) / (np.linalg.norm(pred, axis=1) * np.linalg.norm(true, axis=1))
    return float(np.median(np.degrees(np.arccos(np.clip(cos, -1, 1)))))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--checkpoint", help="probe trained weights instead of the initialization")
    args = parser.parse_args()
    config = RunConfig().update(dict(kv.split("=", 1) for kv in args.set)).validate()
    models = Models.build(config)
    if args.checkpoint:
        from posedepth.io import load_checkpoint
        models.load_named_state(load_checkpoint(args.checkpoint))
    x_train, y_train = pooled_features(models, training_snippets(config))
    x_held, y_held = pooled_features(models, heldout_snippets(config))
    mu, sd = x_train.mean(0), x_train.std(0) + 1e-9
    a, b = (x_train - mu) / sd, (x_held - mu) / sd
    for lam in (1.0, 10.0, 100.0):
        w = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ y_train)
        print(f"ridge={lam:g} heldout median direction error={median_angle(b @ w, y_held):.1f}deg")


if __name__ == "__main__":
    main()
