"""The sample median as location MLE under Laplace noise.

Compares the small-sample variance of the median at n = 5 with the
s^2/(n+2) figure, then checks the large-n variance and the efficiency gain
over the sample mean (asymptotic ratio 2).

    python3 demos/laplace_median.py
"""

from deconv.laplace_location import are_median_vs_mean
from deconv.montecarlo import builtin_scenario, run_study

small = run_study(builtin_scenario("laplace-median-small")).row(5, "median")
print(f"n=5: Monte Carlo Var(median) = {small['empirical_variance_of_root_n_error'] / 5:.4f}"
      f"  s^2/(n+2) = {1 / 7:.4f}")
# order-statistic integral for the middle of 5 Laplace draws gives 0.35118

big = run_study(builtin_scenario("laplace-median"))
med, avg = big.row(1001, "median"), big.row(1001, "mean")
print(f"n=1001: n Var(median) = {med['empirical_variance_of_root_n_error']:.4f} (limit 1),"
      f" n Var(mean) = {avg['empirical_variance_of_root_n_error']:.4f} (exact 2)")
print(f"relative efficiency mean/median = {are_median_vs_mean(med['empirical_variance_of_root_n_error'], avg['empirical_variance_of_root_n_error']):.3f}")
