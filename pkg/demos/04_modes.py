"""All adaptation modes on a handful of stream settings.

Codes read domain axis then class axis: i/n/1 for i.i.d., non-i.i.d. and
continual, 1/u for balanced and imbalanced. Pass ``--full`` for the whole
24-setting grid (a few minutes).
"""
import sys

import numpy as np

from unitta.cli import sweep
from unitta.config import RunConfig
from unitta.engine import MODES

base = RunConfig.from_dict({"domain": {"n": 5, "mode": "iid"}, "class": {"n": 4, "mode": "iid"}})
rows = sweep(base, 24, MODES, workers=4)
if "--full" not in sys.argv:
    keep = {"i1-i1", "n1-i1", "nu-i1", "n1-n1", "11-n1"}
    rows = [r for r in rows if r["setting"] in keep]

print(f"{'setting':8s}" + "".join(f"{m:>20s}" for m in MODES))
for r in rows:
    print(f"{r['setting']:8s}" + "".join(f"{r[m]:19.2f}%" for m in MODES))
print(f"{'mean':8s}" + "".join(f"{np.mean([r[m] for r in rows]):19.2f}%" for m in MODES))
