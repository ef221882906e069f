# %% [markdown]
# # Meshes
#
# Two structured generators cover the test problems: a rectangular box and
# a straight duct with a source block at one end and a detector block at the
# other. Meshes can be validated, written to a small text format and read
# back.

# %%
import tempfile
from pathlib import Path

import numpy as np

from angadapt.mesh import DETECTOR_REGION, SOURCE_REGION, generate_box, generate_duct, load, save, validate

duct = generate_duct(10, 1.0, 0.5)
print("elements", duct.n_elements, "DG nodes", duct.n_nodes)
print("source area", duct.region_volume(SOURCE_REGION), "detector area", duct.region_volume(DETECTOR_REGION))
print("problems:", validate(duct))

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "duct.mesh"
    save(duct, path)
    again = load(path)
print("reloaded equal:", np.array_equal(again.node_xy, duct.node_xy))

box = generate_box(4, 2, lx=2.0, ly=1.0)
print("box elements", box.n_elements, "problems:", validate(box))
