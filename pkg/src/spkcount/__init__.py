"""Multichannel CRNN speaker counting and decoding-position analysis."""

__version__ = "0.1.0"

import os as _os

if _os.environ.get("SPKCOUNT_THREADS"):
    # only effective before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["SPKCOUNT_THREADS"])
