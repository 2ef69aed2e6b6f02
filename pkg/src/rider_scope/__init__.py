"""rider-scope: two-stage e-scooter rider recognition.

Person detection proposes candidate regions, each region is enlarged to
capture scooter pixels, and a transfer-learned binary classifier scores every
crop. The package also ships the dataset-harvesting workflow, the training
protocol, the evaluation suite, and the human-in-the-loop labeling service.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
