"""Quantile regression with interactive fixed effects."""

from ._qrife import (
    ConfigError,
    DesignError,
    DomainError,
    IngestionError,
    QrifeError,
    check_loss,
    estimate,
    fit_ife,
    fit_qr,
    generate,
    monte_carlo,
    select_num_factors,
    true_delta,
)

__all__ = [
    "ConfigError",
    "DesignError",
    "DomainError",
    "IngestionError",
    "QrifeError",
    "check_loss",
    "estimate",
    "fit_ife",
    "fit_qr",
    "generate",
    "monte_carlo",
    "select_num_factors",
    "true_delta",
]
