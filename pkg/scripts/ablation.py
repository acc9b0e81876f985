"""Held-out MSE of the full model against a regression on the six consistency features only."""

import argparse
import logging

import numpy as np

from revhelp.features import compute_stats, consistency_matrix
from revhelp.inference import Predictor, fit_regression, train
from revhelp.latent_model import HyperParams
from revhelp.synthgen import SynthConfig, generate


def run(seed: int, iterations: int) -> tuple[float, float]:
    c = generate(SynthConfig(test_per_user=3, reviews_per_user=23, seed=seed))
    split = c.split
    stats = compute_stats(split.train, split.background_user_key)
    r = train(split, HyperParams(E=2, Z=3, outer_iterations=iterations, seed=seed), stats=stats)
    pred = Predictor.from_training(r.state, r.assignments, split, stats)
    truth = np.array([d.helpfulness for d in split.test])
    full = np.mean((np.array([pred.predict(d) for d in split.test]) - truth) ** 2)
    w = fit_regression(consistency_matrix(split.train, stats), np.array([d.helpfulness for d in split.train]), 1e-3)
    base = np.mean((np.clip(w[0] + consistency_matrix(split.test, stats) @ w[1:], 0, 1) - truth) ** 2)
    return float(full), float(base)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=20)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    wins = 0
    print("seed\tfull_mse\tconsistency_only_mse")
    for s in range(args.seeds):
        full, base = run(s, args.iterations)
        wins += full < base
        print(f"{s}\t{full:.5f}\t{base:.5f}")
    print(f"full model lower in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
