"""Double machine learning for static panels with fixed effects."""

from ._core import (
    PanelDmlError,
    dictionary_width,
    estimate,
    estimate_csv,
    expand_dictionary,
    fit_predict,
    generate_dgp,
    monte_carlo,
    run_cli,
)

__all__ = [
    "PanelDmlError",
    "dictionary_width",
    "estimate",
    "estimate_csv",
    "expand_dictionary",
    "fit_predict",
    "generate_dgp",
    "monte_carlo",
    "run_cli",
]
