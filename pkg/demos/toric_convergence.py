"""Convergence of quantized geodesics to the Legendre oracle for toric data.

Pass ``--full`` for the 64 x 64 study with k = 4, 8, 16, 32 (about half a
minute); the default uses a 32 x 32 grid.
"""
import sys

from wzwlab.experiments import ExperimentConfig, run_convergence_study

if "--full" in sys.argv:
    cfg = ExperimentConfig.preset("toric-endpoints")
else:
    cfg = ExperimentConfig.preset("toric-endpoints", z_resolution=[32, 32],
                                  x_resolution=[32, 32], ks=[2, 4, 8, 16])
rep = run_convergence_study(cfg)
for row in rep.rows:
    print(f"k = {row['k']:3d}   sup error {row['sup_error']:.4f}   "
          f"HYM residual {row['hym_residual']:.1e}")
print(f"error ~ C log k / k with C = {rep.fit['C']:.3f} "
      f"(relative fit residual {rep.fit['relative_residual']:.3f})")
