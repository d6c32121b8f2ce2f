"""Zero-inflated count regression for software defect prediction."""

from .count_models import (
    FittedModel,
    fit,
    fit_poisson_irls,
    fit_zip_em,
    loglik,
    predict_expected,
    predict_total,
    zip_pmf,
)
from .criteria import aic, bic
from .ingest import Dataset, DesignMatrices, ModelSpec, build_design, histogram, load_csv, write_csv

__version__ = "0.1.0"
