"""gridtae: distribution-grid topology and line-parameter estimation.

Subpackages cover the full pipeline: case handling (:mod:`gridtae.netmodel`),
ground-truth simulation (:mod:`gridtae.powerflow`), the estimation model
(:mod:`gridtae.mlmodel`), theoretical precision bounds (:mod:`gridtae.crlb`),
the estimator itself (:mod:`gridtae.cps`), starting-point construction
(:mod:`gridtae.initval`) and the experiment CLI (:mod:`gridtae.cli`).
"""

__version__ = "0.1.0"
