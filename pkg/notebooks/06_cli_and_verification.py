# %% [markdown]
# # Configured runs, output files and the oracle checks
#
# `angadapt run <config>` reads an INI file, writes one VTK file per step and
# a CSV record. `angadapt verify` runs quick brute-force oracle checks. Both
# are thin wrappers over the library calls used here.

# %%
import tempfile
from pathlib import Path

from angadapt.cli import main
from angadapt.cli_io import read_csv
from angadapt.oracle_suite import verify_suite

for r in verify_suite():
    print("PASS" if r.passed else "FAIL", r.name, r.detail)

# %%
config = """
[mesh]
length = 3
h = 0.5
[adapt]
mode = robust
steps = 3
[angle]
max_level = 5
[output]
directory = out
"""
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "small.ini"
    path.write_text(config)
    code = main(["run", str(path)])
    print("exit code", code)
    print(sorted(p.name for p in (Path(tmp) / "out").iterdir()))
    for row in read_csv(Path(tmp) / "out" / "records.csv"):
        print(row)
