"""Shared variance bounds.

Label-space and encoded-space variances are always clamped into
[VAR_MIN, VAR_MAX] so the log(sigma_hat / sigma) term of the KL loss stays
finite; predictive variances get the looser PRED_VAR_FLOOR instead.
"""

import numpy as np

VAR_MIN = 1e-4
VAR_MAX = 1.0
PRED_VAR_FLOOR = 1e-6


def clamp_variance(var):
    """Clamp a variance scalar or array into [VAR_MIN, VAR_MAX]."""
    return np.clip(np.asarray(var, dtype=float), VAR_MIN, VAR_MAX)
