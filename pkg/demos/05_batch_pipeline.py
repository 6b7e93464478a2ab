"""The whole pipeline through the batch front-end.

Equivalent to running, from the repository root:

    fairtune prepare    --config configs/synthetic.json
    fairtune train-grid --config configs/synthetic.json
    fairtune label      --config configs/synthetic.json
    fairtune mc-sweep   --config configs/synthetic.json
    fairtune tune       --config configs/synthetic.json
    fairtune report     out/synthetic/tuner_result.json

Everything is seeded through the config file; re-running rewrites
byte-identical artifacts.
"""

import sys
import tempfile
from pathlib import Path

from fairtune.cli import main

config = Path(__file__).resolve().parent.parent / "configs" / "synthetic.json"
out = Path(tempfile.mkdtemp(prefix="fairtune_demo_")) / "synthetic"

for command in ("prepare", "train-grid", "label", "mc-sweep", "tune"):
    print(f"\n$ fairtune {command}")
    code = main([command, "--config", str(config), "--out", str(out)])
    if code != 0:
        sys.exit(code)

print("\nartifacts:")
for path in sorted(out.rglob("*")):
    if path.is_file():
        print(f"  {path.relative_to(out)}  ({path.stat().st_size} bytes)")

print("\n$ fairtune report")
main(["report", str(out / "tuner_result.json")])
