"""The anomaly coefficient tracks b: circle and square loops against Brownian loops.

With normalization c, the predicted difference is c (b/2) (rho, rho)_grad, so
after dividing by c the circle(R=1) estimate is 6 times the Brownian one.
"""

import argparse

from loopanomaly.conformal_field import AnalyticBump, Box
from loopanomaly.loop_mass import estimate_anomaly_direct, predicted_anomaly
from loopanomaly.loop_space import MeasureSpec


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, default=100_000)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    field = AnalyticBump(0.5, 2.0, box=Box.square(2.5))
    base = None
    for j, m in enumerate((MeasureSpec.brownian(), MeasureSpec.circle(1.0), MeasureSpec.square(0.5))):
        e = estimate_anomaly_direct(field, delta=args.delta, measure=m, N=args.N, rng=[args.seed, j])
        base = base or e.normalized_value
        print(f"{m.sampler_kind:>16s} b={m.exact_b:.4f}: {e.value:.5f} +/- {e.std_error:.1e} "
              f"(prediction {predicted_anomaly(field, m):.5f}); normalized ratio to Brownian "
              f"{e.normalized_value / base:.3f} (expected {m.exact_b * 12:.3f})")


if __name__ == "__main__":
    main()
