"""Phenotype discovery on mixed-type tables: GLRM feature selection, Gower/PAM clustering,
cross-validated tuning, necessity testing and cluster profiling."""

__version__ = "0.1.0"

from ._accel import backend  # noqa: E402
