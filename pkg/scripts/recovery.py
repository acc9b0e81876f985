"""Compare learned facet-word distributions with the generating ones.

Prints, per seed, the top-5 word overlap of each learned (level, facet)
distribution with its best-matching true distribution, and the fraction of
each learned distribution's mass that falls inside a single true block.
"""

import argparse
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from revhelp.inference import train
from revhelp.latent_model import HyperParams
from revhelp.synthgen import SynthConfig, generate, word_blocks


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=30)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    E, Z, W = 2, 3, 100
    blocks = [b for row in word_blocks(E, Z, W) for b in row]
    for seed in range(args.seeds):
        c = generate(SynthConfig(E=E, Z=Z, W=W, seed=seed))
        r = train(c.split, HyperParams(E=E, Z=Z, outer_iterations=args.iterations, seed=seed))
        learned = r.state.phi_matrix().reshape(E * Z, W)
        truth = c.phi.reshape(E * Z, W)
        top = lambda p: set(np.argsort(-p, kind="stable")[:5].tolist())
        overlap = np.array([[len(top(a) & top(b)) / 5 for b in truth] for a in learned])
        rows, cols = linear_sum_assignment(-overlap)
        purity = [max(learned[i, b].sum() for b in blocks) for i in range(E * Z)]
        print(f"seed {seed}: top-5 overlap {np.round(overlap[rows, cols], 2).tolist()}, "
              f"block purity {np.round(purity, 2).tolist()}, "
              f"level agreement {np.mean(r.assignments.levels == c.train_levels):.3f}")


if __name__ == "__main__":
    main()
