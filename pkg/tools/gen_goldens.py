"""Regenerate golden regression fixtures under tests/data/.

Run once after an intentional change to model numerics:
    python3 tools/gen_goldens.py
"""
import pathlib
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from moedt.model import PromptDT
from util import random_batch, tiny_cfg


def main():
    seed, batch_seed = 11, 42
    cfg = tiny_cfg()
    model = PromptDT(cfg)
    params = model.init_params(seed=seed)
    batch = random_batch(cfg, np.random.default_rng(batch_seed), B=2)
    pred = model.forward(params, batch).data
    out = ROOT / "tests" / "data" / "golden_model.npz"
    np.savez(out, pred=pred, seed=seed, batch_seed=batch_seed)
    print(f"wrote {out} pred shape {pred.shape}")


if __name__ == "__main__":
    main()
