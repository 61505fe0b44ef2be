import os
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import dataclasses
import sys
import time

sys.path.insert(0, "src")
from gcdshift import bounds as bd
from gcdshift import curriculum as cur
from gcdshift import encoder as enc
from gcdshift import losses as ls
from gcdshift import synthdata as sd
from gcdshift import trainer as tr

T = 20
SWITCH = 8


def one(style, variant, seed):
    task = dataclasses.replace(sd.TaskConfig(), style_strength=style)
    dataset = sd.generate(task)
    mode = "simgcd" if variant == "simgcd" else "hilo"
    tcfg = tr.TrainConfig(mode=mode, epochs=T, eval_every=T)
    late = {"hilo005": 0.05, "hilo1": 1.0}.get(variant, 0.05)
    ccfg = cur.CurriculumConfig(switch_epoch=SWITCH, late_weight=late)
    t0 = time.time()
    res = tr.run_experiment(dataset, enc.EncoderConfig(), tcfg, ls.LossConfig(),
                            ccfg, bd.BoundsConfig(), seed=seed)
    row = res.rows[-1]
    return (row["seen_all"], row["unseen_all"], row["d_hat"], time.time() - t0)


jobs = []
for style in (0.4, 0.7):
    for variant in ("simgcd", "hilo1", "hilo005"):
        for seed in (0, 1):
            jobs.append((style, variant, seed))

for style, variant, seed in jobs:
    seen, unseen, d, secs = one(style, variant, seed)
    print(f"style {style} {variant:8s} seed {seed}: seen {seen:.3f} unseen {unseen:.3f} "
          f"d {d:.3f} ({secs:.0f}s)", flush=True)
