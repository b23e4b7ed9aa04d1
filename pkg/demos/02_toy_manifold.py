# %% [markdown]
# A convex regularizer learned on a 2-D toy manifold.
#
# Samples come from the unit disc. Training pushes the regularizer down on
# the samples and up on points produced by descending the regularizer from
# noisy copies of them. Afterwards, plain gradient descent from random
# starts should end on the disc, and the disc should score lower than a ring
# around it.

# %%
import numpy as np

from clearreg import icnn, theory

disc = theory.ball(2)
ck = theory.train_toy(disc)
net = ck.to_net()
print(net)
print("smallest constrained weight", net.min_clipped_weight())

# %%
rep = theory.verify_minima_on_manifold(net, disc)
print(rep.to_text())

# %% [markdown]
# Convexity is structural, so a midpoint check on random pairs finds no
# violation whatever the training did.

# %%
print(icnn.check_midpoint_convexity(net, n_pairs=1000, tol=1e-9))

# %%
ends = theory.descend(net, theory.sample_box(disc, 5, np.random.default_rng(1), 1.0), 0.01, 500)
for e in ends:
    print(np.round(e, 3), "distance", round(float(theory.manifold_distance(disc, e)), 4))
