"""alpha (len_rho = delta) against beta (clen_rho = delta) for one loop as delta shrinks."""

import numpy as np

from loopanomaly.conformal_field import AnalyticBump, Box
from loopanomaly.length_functionals import threshold_expansion
from loopanomaly.loop_space import MeasureSpec, sample_unit_loop


def main():
    field = AnalyticBump(0.5, 2.0, box=Box.square(2.5))
    loop = sample_unit_loop(MeasureSpec.brownian(), 256, rng=0)
    print(f"{'delta':>8s} {'alpha':>12s} {'beta':>12s} {'res alpha-beta':>15s} {'res inverse':>12s}")
    for d in np.geomspace(1e-3, 1e-1, 5):
        r = threshold_expansion(field, (0.4, -0.3), d, loop)
        print(f"{d:8.4f} {r['alpha']:12.6e} {r['beta']:12.6e} {r['res_alpha']:15.3e} {r['res_inverse']:12.3e}")


if __name__ == "__main__":
    main()
