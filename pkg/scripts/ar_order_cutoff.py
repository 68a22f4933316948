"""Saliency cutoff at the AR model order.

Trains a pure AR(p) forecaster, then optimizes a saliency mask on a window
much longer than p. Rows the model cannot see get no saliency: the mean mask
value beyond the order drops while the most recent p rows stay hot. Writes
the heatmap as a PGM and prints the recent/early contrast.
"""

import argparse
from pathlib import Path

from tsaliency.analysis import export_heatmap_pgm
from tsaliency.data import (
    apply_scaler,
    chronological_split,
    feature_means,
    fit_scaler,
    make_windows,
)
from tsaliency.interpretation import InterpretConfig, interpret
from tsaliency.models import ModelConfig, build_forecaster
from tsaliency.reference import ReferenceSpec
from tsaliency.synthetic import seasonal_ar_series
from tsaliency.training import TrainConfig, evaluate, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--order", type=int, default=50)
    parser.add_argument("--window", type=int, default=300)
    parser.add_argument("--horizon", type=int, default=5)
    parser.add_argument("--rows", type=int, default=1600)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/ar_cutoff")
    args = parser.parse_args()

    frame = seasonal_ar_series(args.rows, n_features=3, period=24, noise=0.1,
                               seed=args.seed)
    splits = chronological_split(frame, (0.6, 0.2, 0.2))
    scaled = apply_scaler(frame, fit_scaler(frame, splits[0]))
    means = feature_means(scaled, splits[0])

    short = make_windows(scaled, splits[0], args.order + 1, args.horizon)
    fc = build_forecaster(ModelConfig(variant="none", ar_order=args.order),
                          args.order + 1, 3, seed=args.seed)
    cfg = TrainConfig(lr=1e-2, weight_decay=0.0, lambda1=0, lambda2=0,
                      batch_size=256, epochs=60, seed=args.seed,
                      mask_enabled=False, patience=None)
    train(short, fc, None, cfg)

    test = make_windows(scaled, splits[2], args.window, args.horizon)
    print(f"AR({args.order}) test RSE: {evaluate(fc, test).rse:.4f}")
    icfg = InterpretConfig(steps=args.steps, lr=1e-2, lambda1=1e-3,
                           lambda2=1e-3,
                           reference=ReferenceSpec(mode="constant"),
                           seed=args.seed)
    smap = interpret(fc, test[len(test) // 2], icfg, feature_means=means)

    cut = args.window - args.order
    recent = smap.mask_values[cut:].mean()
    early = smap.mask_values[:cut].mean()
    print(f"mean saliency, rows within order:  {recent:.4f}")
    print(f"mean saliency, rows beyond order:  {early:.4f}")
    print(f"contrast ratio: {recent / early:.2f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pgm = out / f"ar{args.order}_saliency_{smap.sample_id}.pgm"
    export_heatmap_pgm(smap.mask_values, pgm)
    print(f"heatmap written to {pgm}")


if __name__ == "__main__":
    main()
