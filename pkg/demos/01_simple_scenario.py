# # Integrated versus fixed propensity scores
#
# Two standard-normal confounders drive both treatment and outcome.  We fit a
# Student-t logistic treatment model by HMC and push either every posterior
# draw of the propensity scores, or only their posterior mean, through the
# beta-binomial outcome model.

import numpy as np

from bayesps import (HMCConfig, PriorSpec, ate_posterior, fit_treatment_model, gen_simple,
                     summarize, total_variance_decomposition, true_ate_oracle)

rng = np.random.default_rng(2)
d, spec = gen_simple(100, "over", rng)
truth, _ = true_ate_oracle(spec, 1_000_000)
print(f"n={d.n}, confounders seen by the model: {d.names}")
print(f"true ATE {truth:.4f}")

# Eight of the ten columns are noise, which is where the propensity-score
# uncertainty starts to matter.

pd = fit_treatment_model(d, PriorSpec.student_t(), HMCConfig(chains=2, warmup=500, samples=500,
                                                             seed=1))
print(f"{pd.K} propensity draws, max R-hat {pd.max_rhat:.3f}")

# + Integrated: J outcome draws for each of the K propensity draws
integ = ate_posterior(d, pd, "integrated", J=10, rng=np.random.default_rng(3))
fixed = ate_posterior(d, pd, "mean_ps", J=10, rng=np.random.default_rng(3))
for name, ap in (("integrated", integ), ("mean_ps", fixed)):
    s = summarize(ap)
    print(f"{name:>10}: mean {s['mean']:+.3f}  95% [{s['lower']:+.3f}, {s['upper']:+.3f}]")
# -

# The extra width of the integrated interval is the between-draw term of the
# total variance.

tv = total_variance_decomposition(integ)
print({k: round(v, 5) for k, v in tv.items()})
print(f"share from propensity uncertainty: {tv['between'] / tv['total']:.1%}")
