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
    late = 1.0 if variant == "hilo1" else 0.05
    ccfg = cur.CurriculumConfig(switch_epoch=SWITCH, late_weight=late)
    t0 = time.time()
    res = tr.run_experiment(dataset, enc.EncoderConfig(), tcfg, ls.LossConfig(),
                            ccfg, bd.BoundsConfig(), seed=seed)
    row = res.rows[-1]
    print(f"style {style} {variant:8s} seed {seed}: seen {row['seen_all']:.3f} "
          f"unseen {row['unseen_all']:.3f} d {row['d_hat']:.3f} ({time.time() - t0:.0f}s)",
          flush=True)


one(0.4, "hilo1", 0)
one(0.7, "hilo1", 0)
one(0.7, "hilo1", 1)
one(1.0, "simgcd", 0)
one(1.0, "simgcd", 1)
one(1.0, "hilo1", 0)
one(1.0, "hilo1", 1)
