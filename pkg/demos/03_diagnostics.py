# # Balance and weight diagnostics
#
# Fit the correct and an under-specified treatment model on the same data
# and compare the posterior distribution of weighted standardized differences.

import numpy as np

from bayesps import (HMCConfig, PriorSpec, balance_posterior, fit_treatment_model, gen_simple,
                     posterior_mean_weights, weight_summary)

d, _ = gen_simple(1000, "correct", np.random.default_rng(5))
cfg = HMCConfig(chains=2, warmup=500, samples=500, seed=4)
full = fit_treatment_model(d, PriorSpec.student_t(), cfg)
under = fit_treatment_model(d.select([0]), PriorSpec.student_t(), cfg)

# Balance is always measured on every confounder, even the one the
# under-specified model never saw.

for label, pd in (("correct", full), ("under", under)):
    rep = balance_posterior(d, pd.pi)
    print(f"{label}: acceptable={rep.acceptable}")
    for r in rep.rows:
        print(f"  {r.name}: raw {r.unweighted:+6.1f}%  weighted {r.mean:+6.1f}% "
              f"[{r.lower:+6.1f}, {r.upper:+6.1f}]{'  <-- over 10%' if r.flagged else ''}")

# Posterior-mean weights: a mean near 2 and no extreme maximum is what
# adequate overlap looks like.

w = posterior_mean_weights(d, full)
ws = weight_summary(w, d.treatment)
print(f"weights mean {ws.mean:.2f} (max {ws.max:.1f}), warning={ws.warning}")
