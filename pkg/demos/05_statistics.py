# %% [markdown]
# # Relating morphometry to pathology
#
# Rank-based statistics throughout, since pathology ratings are ordinal.

# %%
import numpy as np

from cortimorph import stats

rng = np.random.default_rng(0)

# %% [markdown]
# ## Spearman with a one-sided alternative
# Thinner cortex is expected with more pathology, so the test is "less".

# %%
rating = rng.choice(stats.RATING_LEVELS, 22)
thickness = 2.6 - 0.25 * rating + rng.normal(0, 0.2, 22)
res = stats.spearman(thickness, rating, alternative="less")
print(f"rho={res.rho:.2f} p={res.p:.2g} n={res.n}")

# The same t approximation, starting from a published correlation:
print("p for rho=-0.66, n=22:", round(stats.correlation_pvalue(-0.66, 22, "less"), 5))

# %% [markdown]
# ## Controlling for head size

# %%
icv = rng.normal(1500, 120, 37)
putamen = 0.003 * icv + rng.normal(0, 0.4, 37)
wmh = 0.02 - 0.004 * putamen + rng.normal(0, 0.002, 37)
print(stats.partial_spearman(putamen, wmh, icv, "less", covariate_name="icv"))

# %% [markdown]
# ## Agreement between automatic and manual thickness

# %%
manual = rng.uniform(1.5, 3.5, 30)
auto = manual + rng.normal(0.05, 0.15, 30)
print(stats.icc_average_fixed_raters(np.column_stack([auto, manual])))
print(stats.bland_altman(auto, manual))

# %% [markdown]
# ## Many tests at once
# Benjamini-Hochberg keeps the false discovery rate at q.

# %%
p = [0.0004, 0.008, 0.013, 0.03, 0.2, 0.6]
print(stats.bh_fdr(p, q=0.05))

# %% [markdown]
# ## Group differences

# %%
groups = {"AD": rng.normal(4.0, 0.3, 12), "LBD": rng.normal(4.4, 0.3, 9), "FTLD": rng.normal(3.6, 0.3, 8)}
for c in stats.pairwise_group_tests(groups):
    print(f"{c.group_a} vs {c.group_b}: U={c.u_statistic:.0f} p={c.p:.3g} {c.stars}")
