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
STYLE = 0.4


def one(label, flags=(), dhw=1.0, seed=0):
    task = dataclasses.replace(sd.TaskConfig(), style_strength=STYLE)
    dataset = sd.generate(task)
    tcfg = tr.TrainConfig(mode="hilo", epochs=T, eval_every=T,
                          ablations=tr.AblationFlags(**{f: True for f in flags}))
    lcfg = dataclasses.replace(ls.LossConfig(), domain_head_weight=dhw)
    ccfg = cur.CurriculumConfig(switch_epoch=SWITCH, late_weight=1.0)
    t0 = time.time()
    res = tr.run_experiment(dataset, enc.EncoderConfig(), tcfg, lcfg,
                            ccfg, bd.BoundsConfig(), seed=seed)
    row = res.rows[-1]
    print(f"{label:12s} seed {seed}: seen {row['seen_all']:.3f} "
          f"unseen {row['unseen_all']:.3f} d {row['d_hat']:.3f} "
          f"mi {row['mi_estimate']:.3f} ({time.time() - t0:.0f}s)", flush=True)


one("no_mi", ("no_mi",))
one("no_curr", ("no_curriculum",))
one("no_patchmix", ("no_patchmix",))
one("dhw0", (), dhw=0.0)
one("no_mi_dhw0", ("no_mi",), dhw=0.0)
