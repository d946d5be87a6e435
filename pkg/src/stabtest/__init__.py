"""Black-box testing of algorithmic stability under computational budgets."""

from .core import (
    ConstantLearner, DataPoint, Dataset, FiniteDistribution, FittedModel, KNNRegressor, Learner,
    MeanLearner, RandomSeed, RidgeRegressor, SeedThresholdLearner, SizeLearner, Space,
    builtin_learner_zoo, fit, sample_dataset,
)
from .stability import (
    StabilityEstimate, estimate_delta_star_exact, estimate_delta_star_mc, perturbation,
)

from .binom_test import BinomialStrategy, binomial_thresholds, mc_power, power_closed_form
from .harness import BudgetLedger, run_test

__version__ = "0.1.0"

__all__ = [
    "ConstantLearner", "DataPoint", "Dataset", "FiniteDistribution", "FittedModel", "KNNRegressor",
    "Learner", "MeanLearner", "RandomSeed", "RidgeRegressor", "SeedThresholdLearner", "SizeLearner",
    "Space", "builtin_learner_zoo", "fit", "sample_dataset", "StabilityEstimate",
    "estimate_delta_star_exact", "estimate_delta_star_mc", "perturbation", "BinomialStrategy",
    "binomial_thresholds", "mc_power", "power_closed_form", "BudgetLedger", "run_test",
]
