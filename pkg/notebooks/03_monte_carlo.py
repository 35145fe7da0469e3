# %% [markdown]
# # Monte Carlo: error rates of the t-tests
#
# Each replicate draws fresh count noise and a fresh starting point. Six
# irrelevant Gaussian attributes ride along with the three real ones; at
# α = 0.1 about one in ten of their t-tests should reject.
#
# Travel times are held at their true values to keep replicates fast. Set
# `jobs` above 1 to spread replicates over processes; results do not change.

# %%
from suelogit.synthetic import DGPConfig, MonteCarloConfig, preset_configs, run_monte_carlo

config = MonteCarloConfig(replicates=30, dgp=DGPConfig(irrelevant_attributes=6, exogenous_times=True, seed=100))
summary = run_monte_carlo(config)
print("false positives", summary.false_positive_rate)
print("false negatives", summary.false_negative_rate)
print("mean NRMSE", summary.mean_nrmse)
print(summary.per_coefficient_rejection())

# %% [markdown]
# ## Sensor coverage
#
# Fewer observed links mean fewer equations and wider intervals.

# %%
base = MonteCarloConfig(replicates=30, dgp=DGPConfig(exogenous_times=True, seed=300))
for level, cfg in preset_configs("coverage", base):
    s = run_monte_carlo(cfg)
    print(f"coverage {level:.2f}: false negatives {s.false_negative_rate:.3f}, bias {s.bias}")
