"""Likelihood kernel backend selection.

The hot loop of regression fitting evaluates the sample log-likelihood and
its gradient over every sample once per solver iteration. A compiled
extension implements that kernel; when it is unavailable (or when the
``COVCAST_PURE_PYTHON`` environment variable is set) the NumPy reference
implementation in :mod:`covcast._loglik_py` is used instead. Both backends
satisfy the same contract and are compared directly by the test suite.
"""

from __future__ import annotations

import os

from . import _loglik_py

LOG_2PI = _loglik_py.LOG_2PI

if os.environ.get("COVCAST_PURE_PYTHON"):
    _impl = _loglik_py
    BACKEND = "python"
else:
    try:
        from . import _loglik as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _loglik_py
        BACKEND = "python"

loglik_grad = _impl.loglik_grad
