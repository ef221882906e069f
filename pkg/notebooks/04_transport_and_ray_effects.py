# %% [markdown]
# # Transport solves and ray effects
#
# A particle source sits at one end of a void duct and the detector at the
# other. With coarse piecewise-constant angles (uniform Haar level 1) no
# direction bundle hits the detector, so the response is zero up to
# round-off. This is a ray effect. A low-order filtered harmonic expansion
# is rotationally invariant and sees a positive response.

# %%
from angadapt.haar import Forest
from angadapt.harmonics import FpnConfig
from angadapt.mesh import DETECTOR_REGION, generate_duct
from angadapt.transport import FpnDiscretisation, HaarDiscretisation, solve

mesh = generate_duct(10, 1.0, 0.25)

haar = HaarDiscretisation(mesh, Forest.uniform(mesh.n_nodes, 1))
res = solve(haar, haar.source_vector())
print("Haar level 1:", haar.functional(res.x, DETECTOR_REGION), f"({res.iterations} iterations)")

fp = FpnDiscretisation(mesh, FpnConfig(1, 1.0))
res_fp = solve(fp, fp.source_vector())
print("FP_1:        ", fp.functional(res_fp.x, DETECTOR_REGION), f"({res_fp.iterations} iterations)")

# %% [markdown]
# ## Adjoint and duality
# The adjoint is the exact transpose of the forward operator, so the
# functional can be computed from either solution.

# %%
fp_g = fp.goal_vector(DETECTOR_REGION)
adj = solve(fp, fp_g, direction="adjoint")
print("forward F", fp.functional(res_fp.x, DETECTOR_REGION), " adjoint <psi*, q>", adj.x @ fp.source_vector())

# %%
phi = fp.node_scalar_flux(res_fp.x)
y = mesh.node_xy[:, 1]
for lo in range(0, 12, 2):
    sel = (y >= lo) & (y < lo + 2)
    print(f"y in [{lo:2d}, {lo + 2:2d}): mean scalar flux {phi[sel].mean():.3e}")
