"""Fairness-constrained insurance pricing toolkit.

Dependence estimators for maximal correlation, adversarial bias mitigation
(demographic parity and equalized odds), and two pricing architectures: the
traditional two-stage pipeline and a jointly trained autoencoder model.
"""

__version__ = "0.1.0"
