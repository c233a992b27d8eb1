"""screenrep: empirical-Bayes replicability analysis across multiple studies.

Given an n-gene x m-study matrix of p-values or z-scores, the package
computes, for each gene, the local Bayes false discovery rate of the
hypothesis "non-null in at least k studies" (fdr_k). Three engines are
provided:

* SCREEN-ind  - exact fdr_k under study independence (dynamic programming),
* repfdr-UB   - a provable fdr_k upper bound from a memory-restricted EM
                over study configurations,
* SCREEN      - cluster studies by estimated correlation, run the restricted
                EM per cluster, and merge clusters by dynamic programming.

Also included: per-study two-groups mixture fitting, Fisher / BH-count /
Exp-count baselines, and a simulation benchmark with ground truth.
"""

__version__ = "0.1.0"

from . import _kernels
from .data_io import StatsMatrix, load_matrix, pvalues_to_zscores, zscores_to_pvalues
from .two_groups import TwoGroupsModel, fit_normix, fit_study_models
from .indep_dp import fdr_k_independent, fdr_k_table, select_at_cutoff
from .config_em import ConfigState, em_restricted, absorb_study, run_restricted, fdr_k_upper_bound
from .study_cluster import StudyClustering, detect_communities, correlation_matrix
from .screen_pipeline import FdrTable, screen, merge_clusters, cluster_count_distribution, fdr_delta_d

__all__ = [
    "StatsMatrix",
    "load_matrix",
    "pvalues_to_zscores",
    "zscores_to_pvalues",
    "TwoGroupsModel",
    "fit_normix",
    "fit_study_models",
    "fdr_k_independent",
    "fdr_k_table",
    "select_at_cutoff",
    "ConfigState",
    "em_restricted",
    "absorb_study",
    "run_restricted",
    "fdr_k_upper_bound",
    "StudyClustering",
    "detect_communities",
    "correlation_matrix",
    "FdrTable",
    "screen",
    "merge_clusters",
    "cluster_count_distribution",
    "fdr_delta_d",
    "_kernels",
]
