"""Two-stage recognition of signs on weld radiographs.

A from-scratch numpy engine for the orientation classifier (GRNet) and the
sign detector (GYNet with its spatial and channel enhancement block), plus
static cost analysis, a classifier trainer, synthetic data and detection
metrics.
"""

__version__ = "0.1.0"
