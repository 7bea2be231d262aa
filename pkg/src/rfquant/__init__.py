"""Deep random-features models with one-bit hidden weights."""

import os

# prefer OpenMP for numba's parallel kernels; avoids a noisy TBB version probe
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

__version__ = "0.1.0"
