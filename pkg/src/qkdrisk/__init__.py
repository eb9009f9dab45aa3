"""QBER category learning and Trojan-horse risk assessment for QKD links."""

from .channel import AttackSpec, ChannelProfile, inject_trojan_attacks, make_profile_presets, simulate_qber_series
from .config import PipelineConfig, load_config
from .data import FoldSet, QberSample, QberSeries, load_qber_csv, partition_folds, write_qber_csv
from .errors import ConfigError, CsvRowError, DataError, DegenerateFitError, QkdRiskError
from .gmm import EmTrace, GmmModel, aic, em_fit, gmm_pdf, gmm_sample, gmm_tail, log_likelihood
from .ks import KsResult, ks_pvalue_asymptotic, ks_pvalue_exact_small, ks_statistic, ks_test
from .learner import (
    Category,
    CategorySet,
    FitRecord,
    FoldReport,
    algorithm1_fit,
    algorithm2_train,
    algorithm3_test,
    cross_validate,
)
from .risk import (
    GateSet,
    RiskConfig,
    RiskReport,
    RiskWeightSpec,
    assess_windows,
    calibrate_gates,
    eve_detection_bound,
    risk_loss_gamma,
    risk_measure,
    risk_reduction_rate,
    risk_reference,
    trust_check,
)

__version__ = "0.1.0"
