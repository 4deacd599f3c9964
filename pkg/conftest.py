import numpy as np

# Doctests were written against NumPy 1.x scalar reprs (e.g. ``1.5`` rather
# than ``np.float64(1.5)``); keep that repr under NumPy 2.
try:
    np.set_printoptions(legacy="1.25")
except (TypeError, ValueError):  # NumPy < 2 has no "1.25" legacy mode
    pass
