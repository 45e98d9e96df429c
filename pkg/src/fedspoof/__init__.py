"""Self-supervised federated GNSS spoofing detection at desk scale.

Clients extract position/signal features from GNSS traces, label themselves
via a position-fusion oracle, train local LSTM regressors, and a server
aggregates them with FedAvg under an AUC quality gate.
"""

__version__ = "0.1.0"
