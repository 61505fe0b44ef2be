"""Pin BLAS to one thread before numpy loads: the matrices here are small
enough that threading only adds contention, and the acceptance suite runs
four training processes side by side on four cores."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
