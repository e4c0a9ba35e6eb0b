"""KPI-poisoning testbed for Open RAN near-real-time control loops."""

__version__ = "0.1.0"

FEATURES = (
    "UEThpUl",
    "PrbUsedUl",
    "UEThpDl",
    "PrbUsedDl",
    "TotNbrUl_per_sec",
    "TotNbrDl_per_sec",
)
"""KPI columns in dataset order. Timestamp and UEid are keys, not features."""

N_FEATURES = len(FEATURES)
THROUGHPUT_COLS = (0, 2)
INTEGER_COLS = (1, 3, 4, 5)
