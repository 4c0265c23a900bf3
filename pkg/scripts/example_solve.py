"""Solve on the unit sphere with a constant wall temperature and compare with
the exact solution (c + t0 (|zeta|^2 - 2)) M^(1/2).

    python3 scripts/example_solve.py [--t0 0.05] [--nu-scale 1.0]
"""

import argparse
import time

import numpy as np

from lbconvex.boundary_flux import BoundaryTemperature
from lbconvex.collision import KineticModel
from lbconvex.geometry import Sphere
from lbconvex.transport import DistributionField, picard_solve
from lbconvex.velocity import VelocityGrid
from lbconvex.volume import star_shells


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--t0", type=float, default=0.05)
    ap.add_argument("--nu-scale", type=float, default=1.0)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()

    domain, grid = Sphere(), VelocityGrid()
    model = KineticModel().scaled(args.nu_scale)
    volume, mesh = star_shells(domain), domain.mesh(16)
    T = BoundaryTemperature.constant(args.t0)
    t0 = time.perf_counter()
    res = picard_solve(domain, grid, model, volume, mesh, T, tol=args.tol, anderson=0)
    secs = time.perf_counter() - t0
    exact = DistributionField.equilibrium(volume, grid, model, 0.0, args.t0).values
    err = np.max(np.abs(res.field.values - exact)) / np.max(np.abs(exact))
    print(f"converged={res.converged} iterations={len(res.updates)} contraction={res.contraction:.3f} time={secs:.1f}s")
    print(f"relative max-norm error vs exact solution: {err:.2e}")
    print(f"wall flux: mean {res.psi.mean:.3e}, spread {np.ptp(res.psi.values):.2e}")
    for i, u in enumerate(res.updates[:: max(1, len(res.updates) // 10)]):
        print(f"  update {i * max(1, len(res.updates) // 10):4d}: {u:.3e}")


if __name__ == "__main__":
    main()
