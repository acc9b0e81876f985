"""Simulate a corpus, train on it and report held-out metrics plus level recovery.

    python scripts/run_synthetic.py --E 3 --Z 3 --W 150 --users 150 --iterations 30
"""

import argparse
import logging

import numpy as np

from revhelp.evaluation import evaluate, kl_matrices
from revhelp.inference import Predictor, train
from revhelp.latent_model import HyperParams
from revhelp.synthgen import SynthConfig, generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--E", type=int, default=2)
    ap.add_argument("--Z", type=int, default=3)
    ap.add_argument("--W", type=int, default=100)
    ap.add_argument("--users", type=int, default=100)
    ap.add_argument("--reviews-per-user", type=int, default=23)
    ap.add_argument("--iterations", type=int, default=30)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    c = generate(SynthConfig(E=args.E, Z=args.Z, W=args.W, n_users=args.users,
                             reviews_per_user=args.reviews_per_user, test_per_user=3, seed=args.seed))
    r = train(c.split, HyperParams(E=args.E, Z=args.Z, delta=args.delta, outer_iterations=args.iterations, seed=args.seed))
    pred = Predictor.from_training(r.state, r.assignments, c.split)
    scores = [pred.predict(d) for d in c.split.test]
    report = evaluate(scores, [d.helpfulness for d in c.split.test], [d.item_id for d in c.split.test])

    print(f"train reviews {len(c.split.train)}, test reviews {len(c.split.test)}")
    print(f"log-likelihood {r.history[0]['log_likelihood']:.1f} -> {r.history[-1]['log_likelihood']:.1f} "
          f"over {len(r.history) - 1} iterations")
    print(f"level agreement with ground truth {np.mean(r.assignments.levels == c.train_levels):.3f}")
    print(report.to_json(), end="")
    kl_theta, kl_phi = kl_matrices(r.state)
    np.set_printoptions(precision=4, suppress=True)
    print("theta KL\n", kl_theta)
    print("language-model KL\n", kl_phi)


if __name__ == "__main__":
    main()
