# %% [markdown]
# # Fan-beam projection and FBP
#
# Build the default scanner, project a Shepp-Logan phantom, and reconstruct it
# with the rebin-filter-backproject operator ``ril_forward``.

# %%
import numpy as np

from ctmar.geometry import default_geometry, fan_covering, fov_mask
from ctmar.metrics import psnr, ssim
from ctmar.phantom import ellipse_phantom, shepp_logan_specs
from ctmar.projector import forward_fan
from ctmar.ril import make_plan, ril_forward

fan, par, side = default_geometry()
print("fan sinogram", fan.shape, "parallel sinogram", par.shape, "image", side)

# %% [markdown]
# A smaller image keeps the demo quick. ``fan_covering`` picks the angular
# detector pitch so the fan just spans the reconstruction circle.

# %%
side = 128
x = ellipse_phantom(side, 1.0, shepp_logan_specs(side))
keep_out = ~fov_mask(side)
for n_views in (360, 180, 90, 45):
    g = fan_covering(side, 1.0, 321, n_views)
    rec = ril_forward(forward_fan(x, g), make_plan(g, side))
    print(f"{n_views:4d} views  PSNR {psnr(rec, x, exclude_mask=keep_out):6.2f} dB"
          f"  SSIM {ssim(rec, x):.4f}")

# %% [markdown]
# Fewer views give streaks and a lower score; the piecewise-constant phantom
# limits the ceiling through Gibbs ringing at its edges.
