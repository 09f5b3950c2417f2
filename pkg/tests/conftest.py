"""Test-session setup: pin BLAS to one thread before numpy loads.

The matrices here are small (hundreds of rows, widths < 200); letting the
BLAS pool fan out makes everything slower and adds timing noise to the
acceptance benchmarks.
"""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
