from .perturbation import (
    DEFAULT_FACTOR,
    PerturbationCurve,
    PerturbationPlan,
    evaluate_metric,
    perturb_model,
    perturbation_sweep,
    pgi_pgu,
)
from .reports import CorrelationReport, RuntimeReport, correlation_report, layer_scores, runtime_benchmark
from .stats import RankingTable, UndefinedStatistic, quantile, rank_keypoints, roc_auc, spearman
from .experiment import ExplainerSettings, SeedOutcome, run_seed
