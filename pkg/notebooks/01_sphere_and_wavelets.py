# %% [markdown]
# # Sphere patches and Haar wavelets
#
# The direction sphere is split into eight octants, and every patch can be
# cut into four equal-area children. A function that is constant on each
# leaf patch is stored as eight scaling coefficients plus three wavelet
# details per subdivided patch. This notebook builds a ragged tree, moves
# a function between leaf values and wavelet coefficients, and checks the
# round trip.

# %%
import math

import numpy as np

from angadapt.haar import AngleMap, mallat_forward, mallat_inverse, refine
from angadapt.sphere_grid import base_octants, patch_moment, subdivide

octant = base_octants()[0]
kids = subdivide(octant)
print("octant area", octant.area, "= pi/2:", math.isclose(octant.area, math.pi / 2))
print("child areas", [round(k.area, 6) for k in kids])
print("z-moment of the first octant", patch_moment(octant, "z"), "(pi/4 =", math.pi / 4, ")")

# %% [markdown]
# ## A ragged tree
# Refine one octant twice along a single branch, then sample a smooth
# function at the leaf centres.

# %%
tree = AngleMap.from_patches([octant, kids[3]])
print("functions:", tree.n_functions, "leaves:", len(tree.leaves()))

centres = np.array([[0.5 * (p.phi_lo + p.phi_hi), 0.5 * (p.mu_lo + p.mu_hi)] for p in tree.leaves()])
values = 1.0 + centres[:, 1] ** 2 * np.cos(centres[:, 0])
coeffs = mallat_forward(values, tree)
back = mallat_inverse(coeffs)
print("round trip error", np.max(np.abs(back - values)))

# %% [markdown]
# Refining adds three zero details per split and keeps the represented
# function unchanged.

# %%
finer = refine(coeffs, [kids[0]])
print("after refine:", finer.n_functions, "functions")
leafmeans = mallat_inverse(finer)
print("integral before", np.sum(back * [p.area for p in tree.leaves()]))
print("integral after ", np.sum(leafmeans * [p.area for p in finer.leaves()]))
