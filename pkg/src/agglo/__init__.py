"""Image-based characterization of agglomerates from a spray fluidized bed.

Stages: ``imaging`` (segmentation), ``descriptors`` (shape and texture
measurements), ``classify`` (random forest), ``margins`` and ``copula``
(per-time-step bivariate models), ``temporal`` (regression over process
time), ``sensitivity`` (bootstrap analysis) and ``synth`` (ground truth
scenes).
"""

__version__ = "0.1.0"
