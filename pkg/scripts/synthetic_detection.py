"""Can a party tell filled-in rows from real ones?

Trains on union data where a fraction of rows lacks labels (or features),
fills them with each strategy, then runs the spectral detector per batch:
the label party on embedding+label rows, the feature party on the received
gradients. Prints the mean raw AUC (0.5 = undetectable).

    python scripts/synthetic_detection.py [--missing 0.1] [--pos-fraction 0.25] [--batches 50]
"""
import argparse

import numpy as np

from splitshield.harness.data import DatasetSpec, gen_dataset
from splitshield.splitnn import SplitModel, TrainConfig, active_step, forward_passive, train
from splitshield.synthdata import FeatureStrategy, LabelStrategy, UnionFiller, synthetic_attack_auc


def label_side(kind, args, seed):
    data, _ = gen_dataset(DatasetSpec(pos_fraction=args.pos_fraction, seed=seed))
    rng = np.random.default_rng(seed)
    data.has_label = rng.random(len(data)) >= args.missing
    ls = LabelStrategy(kind)
    filler = UnionFiller(ls, None, None, rng)
    model = SplitModel.init(data.X.shape[1], d=8, seed=seed)
    train(model, data, TrainConfig(learning_rate=1.0, epochs=args.epochs, seed=seed), synth=filler)
    aucs = []
    for _ in range(args.batches):
        idx = rng.choice(len(data), 1024, replace=False)
        miss = ~data.has_label[idx]
        A = forward_passive(model, data.X[idx])
        y = filler.fill_labels(model, data, idx, A, np.where(miss, 0, data.y[idx]))
        _, gb, _ = active_step(model, A, y)
        aucs.append(synthetic_attack_auc(gb.grads, miss))
    return float(np.mean(aucs))


def feature_side(kind, args, seed):
    data, _ = gen_dataset(DatasetSpec(pos_fraction=args.pos_fraction, seed=seed))
    rng = np.random.default_rng(seed)
    data.has_features = rng.random(len(data)) >= args.missing
    filler = UnionFiller(None, FeatureStrategy(kind), None, rng)
    model = SplitModel.init(data.X.shape[1], d=8, seed=seed)
    train(model, data, TrainConfig(learning_rate=1.0, epochs=args.epochs, seed=seed), synth=filler)
    aucs = []
    for _ in range(args.batches):
        idx = rng.choice(len(data), 1024, replace=False)
        fake = ~data.has_features[idx]
        A, _ = filler.fill_embeddings(data, idx, forward_passive(model, data.X[idx]))
        aucs.append(synthetic_attack_auc(A, fake, labels=data.y[idx]))
    return float(np.mean(aucs))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--missing", type=float, default=0.1)
    ap.add_argument("--pos-fraction", type=float, default=0.25)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--batches", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    print("party,strategy,mean_auc")
    for kind in ("majority", "random_pos", "random_pred"):
        vals = [label_side(kind, args, s) for s in range(args.seeds)]
        print(f"feature party,label-{kind},{np.mean(vals):.4f}")
    for kind in ("gaussian", "random_moving"):
        vals = [feature_side(kind, args, s) for s in range(args.seeds)]
        print(f"label party,fea-{kind},{np.mean(vals):.4f}")


if __name__ == "__main__":
    main()
