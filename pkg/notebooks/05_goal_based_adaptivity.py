# %% [markdown]
# # Goal-based angular adaptivity
#
# Each step solves forward and adjoint problems in Haar space, forms a
# per-coefficient error metric from the fields and their residuals, and
# refines where the metric exceeds one. The plain metric sees nothing while
# the detector response is zero (ray effects), so it never refines. The
# robust variant compares Haar scalar fluxes against a cheap FP_N
# surrogate and substitutes the surrogate where they disagree.

# %%
from angadapt.adapt_driver import AdaptConfig, run
from angadapt.harmonics import FpnConfig
from angadapt.mesh import generate_duct

mesh = generate_duct(10, 1.0, 0.5)
bounds = (1.47976, 1.661832, 0.0, 1.0)
reference = run(mesh, AdaptConfig(mode="fixed", max_level=6, fixed_level=6, fixed_bounds=bounds)).records[0].detector
print("reference detector response", reference)


def show(mode, steps):
    cfg = AdaptConfig(mode=mode, tau=1e-3, max_level=6, steps=steps, surrogate=FpnConfig(1, 1.0), reference=reference)
    print(mode)
    for r in run(mesh, cfg).records:
        print(
            f"  step {r.step}: ndof {r.ndof:7d}  F {r.detector:.3e}  rel err {r.rel_error:.2e}  "
            f"effectivity {r.effectivity:.3g}  underresolved {r.underresolved_pct:.1f}%"
        )


show("non_robust", 3)
show("robust", 5)
