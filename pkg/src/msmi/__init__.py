"""Max-sliced mutual information: closed forms, neural and kNN estimators."""

__version__ = "0.1.0"
