import json
import time

import numpy as np

from gcdshift import bounds as bd
from gcdshift import curriculum as cur
from gcdshift import encoder as enc
from gcdshift import losses as ls
from gcdshift import synthdata as sd
from gcdshift import trainer as tr

task = sd.TaskConfig(seed=0)
ds = sd.generate(task)
ecfg = enc.EncoderConfig()
T = 20

for mode in ("simgcd", "hilo"):
    t0 = time.time()
    tcfg = tr.TrainConfig(mode=mode, epochs=T, batch_size=64, eval_every=5)
    res = tr.run_experiment(ds, ecfg, tcfg, ls.LossConfig(),
                            cur.CurriculumConfig(switch_epoch=8), bd.BoundsConfig(), seed=0)
    print(f"== {mode}  ({time.time() - t0:.0f} s)")
    for r in res.rows:
        print("  ep%2d seen %.3f/%.3f/%.3f unseen %.3f/%.3f/%.3f e_l %.3f d %.2f mi %+.3f" % (
            r["epoch"], r["seen_all"], r["seen_old"], r["seen_new"],
            r["unseen_all"], r["unseen_old"], r["unseen_new"],
            r["e_l"], r["d_hat"], r["mi_estimate"]))
