"""Occupation moment b of the unit-loop laws, and its n-point discretization.

For Brownian bridges the continuum value is 1/12; n sample points give
(1 - 1/n^2)/12.  Circles of radius R give R^2/2, squares of half-side a give 2a^2/3.
"""

import argparse

from loopanomaly.loop_space import MeasureSpec, occupation_moment_b


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    bm = MeasureSpec.brownian()
    print("Brownian bridge, control-variate estimator")
    print(f"{'n':>6s} {'estimate':>10s} {'s.e.':>9s} {'plain s.e.':>10s} {'(1-1/n^2)/12':>13s}")
    for n in (256, 1024, 4096):
        est = occupation_moment_b(bm, n=n, N=args.N, rng=[args.seed, n])
        print(f"{n:6d} {est.value:10.6f} {est.std_error:9.2e} {est.plain_std_error:10.2e} {bm.discrete_b(n):13.8f}")

    for m in (MeasureSpec.circle(1.0), MeasureSpec.square(1.0)):
        est = occupation_moment_b(m, n=256, N=min(args.N, 20_000), rng=args.seed)
        print(f"{m.sampler_kind:>16s}: b = {est.value:.6f} +/- {est.std_error:.1e} (closed form {m.exact_b:.6f})")


if __name__ == "__main__":
    main()
