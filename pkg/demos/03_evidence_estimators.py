"""Model selection from trajectory statistics: where each estimator peaks.

Builds the feature-dimension task (15 informative + 15 noise features, models
sweep d = 5..30), scores every model with the exact prequential evidence and
with three trajectory-based estimates, and prints the resulting curves.  The
punchline is the single-sample estimator: its expectation is lower than the
evidence by a KL sum that grows with dimension, so it always prefers the
smallest model even though the exact curve peaks at d = 15.
"""

import numpy as np

from tdlab.evidence import (
    estimate_Lk,
    estimate_LS,
    exact_log_ml,
    kl_gap,
    model_selection_task,
)


def main():
    models, data = model_selection_task("feature_dimension", seed=0)
    dims = np.array([m.feature_map for m in models])

    exact = np.array([exact_log_ml(m, data) for m in models])
    l1 = np.empty(len(models))
    l64 = np.empty(len(models))
    ls16 = np.empty(len(models))
    gaps = np.empty(len(models))
    for j, m in enumerate(models):
        ests = estimate_Lk(m, data, (1, 64), n_seeds=16, seed=11)
        l1[j], l64[j] = ests[0].value, ests[1].value
        ls16[j] = np.mean([estimate_LS(m, data, 16, seed=500 + s) for s in range(16)])
        gaps[j] = kl_gap(m, data)

    print(f"{'d':>3} {'exact':>10} {'L (k=1)':>10} {'L_64':>10} {'L^S_16':>10} {'KL sum':>10}")
    for j in range(0, len(models), 3):
        print(f"{dims[j]:3d} {exact[j]:10.2f} {l1[j]:10.2f} {l64[j]:10.2f} "
              f"{ls16[j]:10.2f} {gaps[j]:10.2f}")

    for label, scores in (("exact", exact), ("L (k=1)", l1),
                          ("L_64", l64), ("L^S_16", ls16)):
        print(f"argmax {label:8s} -> d = {dims[int(np.argmax(scores))]}")
    print("\nthe KL column is the k=1 estimator's per-model handicap; it swamps the")
    print("few-nat evidence differences, so only the k>1 estimators recover d = 15.")


if __name__ == "__main__":
    main()
