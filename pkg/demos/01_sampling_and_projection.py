# %% [markdown]
# Undersampled Fourier measurements and the data-consistency projection.
#
# A phantom is measured on a 1-D Cartesian mask at acceleration 3. The
# zero-filled image is the starting point of every reconstruction, and the
# projection onto {x : Ax = b} is the step that keeps iterates honest.

# %%
import numpy as np

from clearreg import forward_model as fm, metrics, phantoms

x = phantoms.make_phantom("shepp-logan-like", 32, seed=0)
mask = fm.make_mask("uniform-1d", (32, 32), 3, acs_fraction=0.08)
print(f"mask {mask.kind}: {mask.data.sum()} of {mask.data.size} samples, "
      f"acceleration {mask.acceleration:.2f}")

# %%
op = fm.MaskedFourier(mask)
b = op.forward(x)
zf = op.adjoint(b)
print("zero-filled PSNR", round(metrics.psnr(fm.magnitude(x), fm.magnitude(zf)), 2), "dB")

# %% [markdown]
# The projection swaps the sampled k-space entries of any image for the
# measured ones. Applying it twice changes nothing, and it never moves two
# images further apart.

# %%
rng = np.random.default_rng(0)
y = rng.standard_normal(x.shape)
p = op.project(y, b)
print("residual after projection", op.residual(p, b))
print("idempotent", np.allclose(op.project(p, b), p))
z = rng.standard_normal(x.shape)
print("non-expansive", np.linalg.norm(p - op.project(z, b)) <= np.linalg.norm(y - z))
