"""Reward models under intervention: invariance buys robustness.

Three linear reward models meet a do() intervention on the non-causal
variable x3.  The invariant model uses the parents found by the invariance
scan and is exactly flat.  An all-variables least-squares fit keeps a tiny
(finite-sample) weight on x3 and drifts slightly.  A proxy model that stands
x3 in for an unmeasured parent predicts beautifully on i.i.d. data and then
pays for the borrowed weight as soon as x3 is moved.  The scan also flags the
i.i.d. family as non-identified, which is the warning that the proxy trap is
open.
"""

import numpy as np

from tdlab.causal import (
    build_synthetic_family,
    fit_reward_weights,
    intervention_robustness,
    linear_misa,
)


def main():
    data = build_synthetic_family(n_envs=3, n_steps=1000, seed=0)
    report = linear_misa(data, alpha=0.05)
    print(f"invariance scan on intervened envs selected: {sorted(report.selected)} "
          f"(non-identified: {report.non_identified})")

    iid = build_synthetic_family(n_envs=3, n_steps=1000, seed=0,
                                 intervention_scales=(1.0, 1.0, 1.0))
    iid_report = linear_misa(iid, alpha=0.05)
    print(f"same scan on i.i.d. envs: non-identified = {iid_report.non_identified}")

    misa = fit_reward_weights(data, subset=report.selected)
    full = fit_reward_weights(iid)
    proxy = fit_reward_weights(iid, subset={0, 2})  # x2 unmeasured; x3 stands in
    print(f"\nweights (intercept, x1, x2, x3):")
    print(f"  invariant: {np.round(misa, 3)}")
    print(f"  full OLS:  {np.round(full, 3)}")
    print(f"  proxy:     {np.round(proxy, 3)}")

    full_curve = intervention_robustness(full, misa, range(11), seed=0)
    proxy_curve = intervention_robustness(proxy, misa, range(11), seed=0)
    print(f"\n{'do(x3)':>7} {'invariant':>10} {'full OLS':>10} {'proxy':>10}")
    for v, m, f, p in zip(full_curve.values, full_curve.misa_mse,
                          full_curve.full_mse, proxy_curve.full_mse):
        print(f"{v:7.0f} {m:10.4f} {f:10.4f} {p:10.1f}")
    print("\nweight borrowed from an unmeasured parent is repaid, with interest,")
    print("under intervention; the invariant model owes nothing.")


if __name__ == "__main__":
    main()
