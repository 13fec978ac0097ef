# # One replication of the high-dimensional design
#
# 100 sparse binary confounders, n = 1000, about 70% treated and a 10% event
# rate.  The coefficient vector is the synthetic stand-in shipped with the
# package (see ``study_meta`` for its description).

import time

import numpy as np

from bayesps import (BartConfig, HMCConfig, PriorSpec, ate_posterior, fit_bart_probit,
                     fit_treatment_model, gen_highdim, highdim_spec, ipw_mle, naive_estimate,
                     summarize, true_ate_oracle)

spec = highdim_spec("table3")
print(spec.note)
d = gen_highdim(spec, np.random.default_rng(7))
truth, _ = true_ate_oracle(spec, 1_000_000)
print(f"treated {d.treatment.mean():.2f}, events {d.outcome.mean():.3f}, true ATE {truth:.3f}")

hmc = HMCConfig(chains=2, warmup=500, samples=500, seed=11)
fits = {}
for label, fit in (
    ("student_t", lambda: fit_treatment_model(d, PriorSpec.student_t(), hmc)),
    ("horseshoe", lambda: fit_treatment_model(d, PriorSpec.horseshoe(), hmc)),
    ("bart", lambda: fit_bart_probit(d, BartConfig(seed=11))),
):
    t0 = time.perf_counter()
    fits[label] = fit()
    print(f"{label:>9} fitted in {time.perf_counter() - t0:.1f}s")

# Integrated posterior summaries next to the frequentist comparators

for label, pd in fits.items():
    s = summarize(ate_posterior(d, pd, "integrated", rng=np.random.default_rng(0)))
    print(f"{label:>9}: {s['mean']:+.3f} [{s['lower']:+.3f}, {s['upper']:+.3f}]")
for e in (ipw_mle(d), naive_estimate(d)):
    print(f"{e.method:>9}: {e.point:+.3f} [{e.lower:+.3f}, {e.upper:+.3f}]")

# One replication says little about bias.  What it does show is interval
# width: the student-t fit spreads its uncertainty over 100 weakly identified
# coefficients, the horseshoe shrinks most of them away.  ``run_study`` (or
# ``bayesps simulate --preset table3``) averages over replications.
