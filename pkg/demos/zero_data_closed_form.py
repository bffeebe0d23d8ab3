"""Quantized approximation of the zero geodesic against its closed-form error.

With zero boundary data the envelope is zero, the HYM solve is trivial and
the sup error of the quantized potential is exactly ``log(k + 1) / k``.
"""
import math

from wzwlab.experiments import ExperimentConfig, run_convergence_study

rep = run_convergence_study(ExperimentConfig.preset("constant"))
print(f"{'k':>4}  {'sup error':>12}  {'log(k+1)/k':>12}")
for row in rep.rows:
    k = row["k"]
    print(f"{k:4d}  {row['sup_error']:12.9f}  {math.log(k + 1) / k:12.9f}")
