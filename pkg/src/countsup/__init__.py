"""Count-based weak supervision: exact count probabilities and their losses.

The kernel computes the distribution of the sum of independent Bernoulli
predictions in stable log space with exact reverse-mode gradients; on top
sit the objectives for proportion-labeled bags, presence-labeled bags, and
positive/unlabeled data, a small MLP scorer, data generators, a trainer,
and a brute-force verification oracle.
"""

from .countdp import (
    CountDistribution,
    CountGradient,
    CountTable,
    InstanceScores,
    backward_count,
    count_distribution,
    count_log_prob,
    forward_count,
    interval_log_prob,
    log1mexp,
    logsumexp2,
)
from .losses import (
    CappedLossWarning,
    LossValue,
    MixtureEstimate,
    binomial_log_pmf,
    estimate_mixture_proportion,
    llp_loss,
    mil_loss,
    positive_ce_loss,
    pu_expect_loss,
    pu_kl_loss,
)
from .model import Mlp, MlpSpec, OptimState, backward, forward, step
from .oracle import brute_force_count_distribution, finite_diff_gradient
from .trainer import TrainConfig, TrainResult, auc, early_stop_select, predict_bag_mil, train

__version__ = "0.1.0"

__all__ = [
    "CountDistribution",
    "CountGradient",
    "CountTable",
    "InstanceScores",
    "backward_count",
    "count_distribution",
    "count_log_prob",
    "forward_count",
    "interval_log_prob",
    "log1mexp",
    "logsumexp2",
    "CappedLossWarning",
    "LossValue",
    "MixtureEstimate",
    "binomial_log_pmf",
    "estimate_mixture_proportion",
    "llp_loss",
    "mil_loss",
    "positive_ce_loss",
    "pu_expect_loss",
    "pu_kl_loss",
    "Mlp",
    "MlpSpec",
    "OptimState",
    "backward",
    "forward",
    "step",
    "brute_force_count_distribution",
    "finite_diff_gradient",
    "TrainConfig",
    "TrainResult",
    "auc",
    "early_stop_select",
    "predict_bag_mil",
    "train",
    "__version__",
]
