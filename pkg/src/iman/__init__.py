"""Unsupervised domain adaptation for verification embeddings.

MMD-based domain alignment, graph-clustering pseudo-labels, and a
mutual-information adaptation loss over a small reverse-mode autodiff
core, plus the verification evaluation protocol (10-fold pair accuracy,
ROC, TAR@FAR).
"""

from .autodiff import Tensor, constant, leaf
from .clustering import (
    ClusterConfig,
    PseudoLabeling,
    build_graph,
    cluster_pipeline,
    connected_components,
    cosine_similarity_matrix,
    make_pseudolabels,
    rand_index,
)
from .data import Dataset, SyntheticSpec, generate_domains, load_csv, save_csv
from .evaluation import (
    PairList,
    RocCurve,
    VerificationReport,
    all_pairs,
    discrepancy_report,
    embed,
    projection_2d,
    roc_and_tar,
    score_pairs,
    select_difficult_pairs,
    tenfold_accuracy,
)
from .kernels import (
    AdaptationConfig,
    KernelSpec,
    median_heuristic,
    mmd2_biased,
    mmd2_multilayer,
    mmd2_unbiased,
    rbf_kernel_matrix,
)
from .losses import (
    ClassifierOutput,
    LossWeights,
    angular_margin_loss,
    conditional_entropy,
    cross_entropy,
    marginal_distribution,
    mi_loss,
    softmax,
    total_loss,
)
from .network import (
    GradCheckReport,
    ParamStore,
    backward,
    finite_difference_check,
    forward_trunk,
    init_head,
    init_trunk,
    make_rng,
    sgd_step,
)
from .pipeline import (
    ModelState,
    RunHistory,
    StageReport,
    TrainConfig,
    init_model,
    mi_adapt,
    pre_adapt,
    pretrain,
    run_iman,
)

__version__ = "0.1.0"
