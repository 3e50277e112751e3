"""Progression prediction for Parkinson's disease.

Builds progression targets from longitudinal motor assessments, derives
feature sets from instrumented gait/balance recordings and clinical scores,
and searches gradient-boosted trees and feedforward nets with nested
cross-validation. ``pdprog.cli`` is the command-line entry point.
"""

__version__ = "0.1.0"

from .cohort import (  # noqa: F401
    Cohort,
    CohortError,
    Subject,
    TargetKind,
    Visit,
    compute_targets,
    parse_cohort,
    write_cohort,
)
from .featureset import (  # noqa: F401
    FeatureMatrix,
    FeatureSetId,
    Provenance,
    apply_transforms,
    build_feature_set,
    prepare_fold,
)
from .gbt import GbtConfig, GbtModel, fit_gbt, predict_gbt  # noqa: F401
from .metrics import (  # noqa: F401
    ImportanceReport,
    classify_fast_from_regression,
    paired_t_test,
    permutation_importance,
    ppv,
    r2,
)
from .nnet import NetConfig, NetModel, predict_net, train_net  # noqa: F401
from .search import (  # noqa: F401
    ExperimentConfig,
    ModelFamily,
    NestedCvResult,
    ResultGrid,
    grid_to_csv,
    nested_cv,
    run_experiment,
)
from .seeding import derive_seed, rng_for  # noqa: F401
from .synthcohort import (  # noqa: F401
    SynthSpec,
    SynthSpecError,
    generate_cohort,
    planted_truth,
    randomize_targets,
)
