"""Class-label vocabulary shared by the dataset store, classifier, and metrics."""

RIDER = "rider"
NON_RIDER = "non_rider"
UNLABELED = "unlabeled"

CLASS_LABELS = (RIDER, NON_RIDER)
