"""Values printed for the ten-study case study, kept for side-by-side comparison.

``PRINTED_POWER`` is the per-study power column of the t-test table;
``PRINTED_PII`` holds the 95% PII intervals by sample size.  Neither is used
as an input to any computation.
"""

PRINTED_POWER = {
    "1": 0.3, "2": 0.6, "3": 0.2, "4": 0.3, "5": 0.2,
    "6": 0.4, "7": 0.2, "8": 0.6, "9": 0.3, "10": 0.5,
}

PRINTED_PII = {
    20: {"1": (1.37, 4.64), "2": (3.67, 12.45), "3": (1.08, 3.67), "4": (1.95, 6.61),
         "5": (1.41, 4.76), "6": (3.06, 10.37), "7": (0.76, 2.59), "8": (2.99, 10.12),
         "9": (0.98, 3.34), "10": (1.02, 3.47)},
    30: {"1": (0.98, 3.95), "2": (2.63, 10.61), "3": (0.78, 3.13), "4": (1.40, 5.64),
         "5": (1.01, 4.06), "6": (2.19, 8.83), "7": (0.55, 2.20), "8": (2.14, 8.62),
         "9": (0.71, 2.84), "10": (0.73, 2.96)},
    40: {"1": (0.76, 3.47), "2": (2.04, 9.30), "3": (0.60, 2.74), "4": (1.08, 4.94),
         "5": (0.78, 3.56), "6": (1.70, 7.75), "7": (0.42, 1.93), "8": (1.65, 7.56),
         "9": (0.55, 2.49), "10": (0.57, 2.59)},
}

# posterior summary of the population effect, log ms
PRINTED_MU_MEAN = -0.05
PRINTED_MU_CI = (-0.08, -0.03)

# normal summary of the effect and moments of precision used for power distributions
EFFECT_MEAN = -0.05
EFFECT_SD = 0.01
PRECISION_MEAN = 16.3
PRECISION_SD = 7.07
