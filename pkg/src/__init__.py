"""prism-desk: two-stage video encoder pretraining at desk scale"""

__version__ = "0.1.0"
