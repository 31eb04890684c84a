# File: seqnet/__init__.py
# Package bootstrap: loads .env and caps BLAS worker threads before numpy is imported

import os

from dotenv import load_dotenv

load_dotenv()

# SEQCONV_THREADS caps every native thread pool; numpy reads these at import time.
_THREADS = os.environ.get("SEQCONV_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

__version__ = "0.3.0"
