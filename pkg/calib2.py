import sys
import time

import gcdshift.bounds as bd
import gcdshift.curriculum as cur
import gcdshift.encoder as enc
import gcdshift.losses as ls
import gcdshift.synthdata as sd
import gcdshift.trainer as tr

variant = sys.argv[1]
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

ds = sd.generate(sd.TaskConfig())
mode = "simgcd" if variant == "simgcd" else "hilo"
tcfg = tr.TrainConfig(mode=mode, epochs=60, eval_every=10)
ccfg = cur.CurriculumConfig()
if variant == "hilo1":
    ccfg = cur.CurriculumConfig(late_weight=1.0)

t0 = time.time()
res = tr.run_experiment(ds, enc.EncoderConfig(), tcfg, ls.LossConfig(), ccfg,
                        bd.BoundsConfig(), seed=seed)
print(f"== {variant} seed {seed}  ({time.time() - t0:.0f} s)")
for r in res.rows:
    print(f"  ep{r['epoch']:3d} seen {r['seen_all']:.3f}/{r['seen_old']:.3f}/{r['seen_new']:.3f}"
          f" unseen {r['unseen_all']:.3f}/{r['unseen_old']:.3f}/{r['unseen_new']:.3f}"
          f" e_l {r['e_l']:.3f} d {r['d_hat']:.2f} mi {r['mi_estimate']:.3f}"
          f" slack1 {r['thm1_slack']:.3f}")
