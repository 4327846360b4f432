"""Composing pre-trained generative models via classifier guidance.

The library has three layers. The exact layer (tables, ops, gaussians,
metrics, dsl) defines composition operators on finite probability tables and
Gaussian mixtures and evaluates them in closed form. The engine layer (grid,
gfn_train, gfn_classifier, gfn_compose, sde, sde_classifier, nn) realizes the
same compositions by sampling: classifier-guided GFlowNet policies on a grid
DAG and classifier-guided reverse diffusion over Gaussian mixtures, with exact
dynamic-programming and quadrature oracles next to the learned classifiers.
The harness layer (config, cli, reportviz) runs config-driven experiments.

Names are re-exported lazily so that importing the package stays cheap and the
CLI can pin thread counts before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # tables
    "DensityTable": "tables",
    "l1_distance": "tables",
    "save_csv": "tables",
    "load_csv": "tables",
    "save_binary": "tables",
    "load_binary": "tables",
    # ops
    "harmonic_mean": "ops",
    "contrast": "ops",
    "nary_posterior": "ops",
    "energy_product": "ops",
    "energy_negation": "ops",
    "mixture": "ops",
    "mixture_decomposition_weights": "ops",
    # gaussians
    "GaussianComponent": "gaussians",
    "GaussianMixtureDensity": "gaussians",
    "gaussian_1d": "gaussians",
    "NegationProperness": "gaussians",
    "gaussian_negation_is_proper": "gaussians",
    "negation_log_integral": "gaussians",
    "negation_quadrature_diverges": "gaussians",
    "log_simpson": "gaussians",
    # metrics
    "wasserstein1": "metrics",
    # dsl
    "parse": "dsl",
    "pretty_print": "dsl",
    "eval_exact": "dsl",
    "lower": "dsl",
    "execute_plan_exact": "dsl",
    "referenced_bases": "dsl",
    "BaseRef": "dsl",
    "Hm": "dsl",
    "Con": "dsl",
    "Post": "dsl",
    "PlanStage": "dsl",
    "ObservationPlan": "dsl",
    # nn
    "Mlp": "nn",
    "AdamState": "nn",
    "EmaShadow": "nn",
    "adam_step": "nn",
    "ema_update": "nn",
    "log_softmax": "nn",
    "softmax": "nn",
    "softmax_cross_entropy": "nn",
    "save_checkpoint": "nn",
    "load_checkpoint": "nn",
    "save_mlp": "nn",
    "load_mlp": "nn",
    # grid
    "GridDag": "grid",
    "build_grid_dag": "grid",
    "ForwardPolicy": "grid",
    "Trajectory": "grid",
    "RewardField": "grid",
    "bump_reward": "grid",
    "sample_trajectory": "grid",
    "sample_trajectory_batch": "grid",
    "enumerate_distribution": "grid",
    "visit_probabilities": "grid",
    "masked_action_probs": "grid",
    "ACTION_DOWN": "grid",
    "ACTION_RIGHT": "grid",
    "ACTION_STOP": "grid",
    # gflownet training and classifiers
    "TrainBaseConfig": "gfn_train",
    "TrainBaseResult": "gfn_train",
    "train_base": "gfn_train",
    "ClassifierOracle": "gfn_classifier",
    "exact_classifier": "gfn_classifier",
    "SculptClassifier": "gfn_classifier",
    "parameterized_label_weights": "gfn_classifier",
    "ClassifierTrainConfig": "gfn_classifier",
    "TrainClassifierResult": "gfn_classifier",
    "train_classifier": "gfn_classifier",
    "save_classifier": "gfn_classifier",
    "load_classifier": "gfn_classifier",
    "mixture_policy": "gfn_compose",
    "guided_policy": "gfn_compose",
    "composed_policy": "gfn_compose",
    # diffusion
    "VeSde": "sde",
    "DiffusedMixture": "sde",
    "diffused_marginal": "sde",
    "analytic_score": "sde",
    "label_posterior": "sde",
    "mixture_backward_drift": "sde",
    "heterogeneous_backward_drift": "sde",
    "mixture_density": "sde",
    "QuadratureJoint": "sde",
    "quadrature_label_joint": "sde",
    "composed_backward_drift": "sde",
    "euler_maruyama": "sde",
    "base_prior_sampler": "sde",
    "composed_prior_sampler": "sde",
    "save_samples": "sde",
    "load_samples": "sde",
    "save_density_curve": "sde",
    "load_density_curve": "sde",
    "TimeClassifier": "sde_classifier",
    "TimeClassifierTrainConfig": "sde_classifier",
    "TrainTimeClassifierResult": "sde_classifier",
    "train_time_classifier": "sde_classifier",
    "save_time_classifier": "sde_classifier",
    "load_time_classifier": "sde_classifier",
    # harness
    "ExperimentConfig": "config",
    "load_config": "config",
    "parse_config": "config",
    "apply_overrides": "config",
    "save_ppm": "reportviz",
    "render_heatmap_rows": "reportviz",
    "render_curves": "reportviz",
    "heatmap_rgb": "reportviz",
    # errors
    "GencomposeError": "errors",
    "ShapeMismatch": "errors",
    "DisjointSupport": "errors",
    "UnboundedRatio": "errors",
    "EmptyObservations": "errors",
    "BadWeights": "errors",
    "UnknownIdentifier": "errors",
    "NonFiniteDetected": "errors",
    "ZeroObservationProbability": "errors",
    "InconsistentBases": "errors",
    "AllZeroDensity": "errors",
    "QuadratureNonConvergence": "errors",
    "ConfigError": "errors",
    "MissingCheckpoint": "errors",
    "OracleMismatch": "errors",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name: str):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__() -> list[str]:
    return sorted(set(globals()) | set(_EXPORTS))
