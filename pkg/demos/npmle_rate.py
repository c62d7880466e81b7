"""How fast the NPMLE mixture density approaches the truth.

Exponential noise, 64 equal atoms on [0, 1]. The mean Hellinger distance
between the fitted and true mixture densities is regressed on n; the
theory bounds it by n^{-1/3} up to logs.

    python3 demos/npmle_rate.py        (about a minute)
"""

from deconv.montecarlo import builtin_scenario, run_study

rep = run_study(builtin_scenario("exp-hellinger"))
for d in rep.extras["distances"]:
    print(f"n={d['n']:5d}  mean Hellinger {d['hellinger']:.4f}  mean W1(F_hat, F0) {d['w1']:.4f}")
h = rep.extras["hellinger_rate"]
print(f"log-log slope {h['slope']:.3f} +- {h['se']:.3f}")
print("plug-in minus naive, sqrt(n)-scaled:", rep.extras.get("plugin_naive_gap"))
