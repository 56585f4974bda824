"""Tree-dependent component analysis: demixing into tree-structured sources."""

from .core import (DataFormatError, Dataset, DegenerateData, DimensionMismatch, InvalidTree,
                   SingularCovariance, SingularMatrix, SpanningTree, TCAError, estimate_covariance,
                   load_csv, load_dataset, save_csv, transform_sources)
from .density import (GaussianMixture, MixtureOfExperts, TreeDensityModel, fit_gmm, fit_moe,
                      fit_tree_density, load_model, log_likelihood, mdl_select, sample_model,
                      save_model)
from .gaussian import gaussian_mi_matrix, gaussian_project, gaussian_t_mi, tree_covariance
from .kde import KdeConfig, KdeContrast, contrast_JE, kde_entropy_1d, kde_entropy_2d, pairwise_mi_kde
from .kgv import KgvConfig, KgvContrast, contrast_JK, incomplete_cholesky, kgv_mutual_information
from .metrics import amari_distance, e_w, metric_report, tree_error
from .optimizer import (FitResult, LineSearch, OptimizerConfig, alternate_minimize, fit_tca,
                        ica_initialize, objective, penalty_JC)
from .synth import GeneratorSpec, generate, sample_tca_instance, sample_treewidth_instance
from .trees import all_spanning_trees, max_weight_spanning_tree

__version__ = "0.1.0"
