#!/usr/bin/env python
"""
example_pipeline.py
===================
End-to-end walk through the **bimm** library on the bundled ``toy`` preset.

This example demonstrates:
--------------------------
1. **Config Loading**: A packaged preset, validated and built into settings objects
2. **Overrides**: Shortening the schedules with dotted ``section.field`` keys
3. **Targets**: Dumping the per-tap targets of one synthetic clip
4. **Pretraining**: Image branch, then both branches jointly with partial sharing
5. **Finetuning**: The video branch on the motion-direction task
6. **Run Record**: A finalised ``run_manifest.json`` with artifact digests
7. **Export**: The run's results as a Markdown card

Run it with ``python example_pipeline.py [OUT_DIR]``; everything lands under
``OUT_DIR`` (default ``runs/example``).
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

from bimm import Config, RunManifest, to_markdown_card
from bimm import pipeline
from bimm.errors import BimmError

# --------------------------------------------------------------------------- #
# Logging Configuration                                                       #
# --------------------------------------------------------------------------- #
logging.basicConfig(
    level="INFO",
    format="%(asctime)s %(levelname)s %(message)s",
)
log = logging.getLogger("bimm.examples")

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/example")

# --------------------------------------------------------------------------- #
# Step 1: Load the Config                                                     #
# --------------------------------------------------------------------------- #
# Presets ship inside the package; loading injects schema defaults, validates
# and then checks the cross-field rules (taps increasing, heads divide width).

cfg = Config.preset("toy")
log.info("Loaded %r", cfg)

# --------------------------------------------------------------------------- #
# Step 2: Shorten the Schedules                                               #
# --------------------------------------------------------------------------- #
cfg = cfg.overrides({
    "pretrain_ventral.total_steps": 40,
    "pretrain_ventral.warmup_steps": 4,
    "pretrain_joint.total_steps": 60,
    "pretrain_joint.warmup_steps": 6,
    "finetune.epochs": 3,
    "data.image_size": 64,
    "data.video_size": 32,
    "output.dir": str(out),
})

manifest = RunManifest(command="example", argv=sys.argv[1:])
manifest.set_config(cfg)

try:
    # ----------------------------------------------------------------------- #
    # Step 3: Targets of One Clip                                             #
    # ----------------------------------------------------------------------- #
    clips = pipeline.video_dataset(cfg)
    written = pipeline.stage_targets(cfg, out, clips[0], "dorsal", manifest=manifest)
    log.info("Target card: %s", written["card"])

    # ----------------------------------------------------------------------- #
    # Step 4-5: Pretrain and Finetune                                         #
    # ----------------------------------------------------------------------- #
    summary = pipeline.run_pipeline(cfg, out, manifest=manifest)
    manifest.add_message("INFO", f"test accuracy {summary['test_acc']:.3f}")
    code, error = 0, None
except BimmError as exc:
    log.error("%s: %s", type(exc).__name__, exc)
    manifest.add_message("ERROR", str(exc))
    code, error = exc.exit_code, f"{type(exc).__name__}: {exc}"

# --------------------------------------------------------------------------- #
# Step 6: Finalise the Run Record                                             #
# --------------------------------------------------------------------------- #
manifest.finalise(exit_code=code, error=error)
manifest.save(out / "run_manifest.json")
log.info("Run %s finished with status %s", manifest["run_id"], manifest["status"])

# --------------------------------------------------------------------------- #
# Step 7: Markdown Card                                                       #
# --------------------------------------------------------------------------- #
print(to_markdown_card({"run_id": manifest["run_id"], "status": manifest["status"], "results": manifest["results"]}))
sys.exit(code)
