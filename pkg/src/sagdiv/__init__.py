"""Kernel SAGD-IV: functional stochastic approximate gradient descent for
nonparametric instrumental variable regression."""
from .baselines import KIVModel, TSLSModel, fit_2sls, fit_kiv, fit_naive_krr
from .benchmarks import (
    GeneratedData,
    RunReport,
    ScenarioOracle,
    ScenarioSpec,
    derive_seed,
    gen_binary,
    gen_continuous,
    generate,
    mse_vs_truth,
    run_scenario,
)
from .core import Dataset, LearningRateSchedule, LossSpec, SearchSetSpec, project_linf
from .estimators import (
    CMEOperatorModel,
    ConditionalMeanModel,
    DensityRatioModel,
    apply_cme,
    eval_density_ratio,
    fit_cme_operator,
    fit_conditional_mean,
    fit_density_ratio,
)
from .kernel import KernelSpec, RidgeModel, StandardizedKernel, fit_ridge, median_heuristic, refine_reg_search
from .sagd import SAGDConfig, SAGDModel, eval_sagd, fit_kernel_sagdiv, fit_sagdiv, mc_projected_risk

__version__ = "0.1.0"
