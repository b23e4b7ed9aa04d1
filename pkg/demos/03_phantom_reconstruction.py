# %% [markdown]
# Learning a convex image prior from phantoms and reconstructing with it.
#
# This is a short version of the acceptance experiment: a few epochs on
# 32x32 phantoms, then projected subgradient descent from the zero-filled
# image, compared with total variation. Expect a few minutes on one core.

# %%
import numpy as np

from clearreg import evaluation, forward_model as fm, icnn, phantoms, training as tr
from clearreg.solver import PGDConfig, pgd_reconstruct

train = phantoms.phantom_set(200, 32, seed=1)
test = phantoms.phantom_set(8, 32, seed=2)
mask = fm.make_mask("uniform-1d", (32, 32), 3, acs_fraction=0.08)

# %%
cfg = tr.TrainConfig(epochs=10, batch_size=8, step_size=1e-3, optimizer="adam",
                     adam_betas=(0.5, 0.9), latent_steps=5, init_noise_std=0.1,
                     walk_noise_std=0.005)
ck = tr.train(train, cfg, arch=icnn.ArchSpec())
for row in ck.history:
    print(row)

# %% [markdown]
# The trace records the regularizer value and PSNR at every iterate. The
# data residual stays at rounding level because every iterate is projected.

# %%
op = fm.MaskedFourier(mask)
b = op.forward(test[0])
res = pgd_reconstruct(ck.to_net(), op, b, PGDConfig(max_iters=100, step_constant=30.0,
                                                    ground_truth=test[0]))
print("PSNR first/last", round(res.psnr[0], 2), round(res.psnr[-1], 2))
print("max residual", max(res.residual))

# %%
ecfg = evaluation.EvalConfig(pgd=PGDConfig(max_iters=100, step_constant=30.0,
                                           record_trace=False))
records = evaluation.evaluate_suite([ck], test, [("uniform-1d-R3", mask)], cfg=ecfg)
print(evaluation.summary_table(records))
