"""Component-wise gradient boosting for functional regression."""

from .baselearners import (
    TIME,
    Bbs,
    Bbsc,
    Bconcurrent,
    Bfpc,
    Bhist,
    Bols,
    Bolsc,
    Brandom,
    Bsignal,
    Compose,
    Intercept,
    Limits,
)
from .boosting import Control, FittedModel, ModelSpec, fit, load_model
from .data import Dataset, FunctionalCovariate, Response, ScalarCovariate, load_dataset
from .families import binomial, gaussian, huber, laplace, poisson, quantile

__version__ = "0.1.0"
