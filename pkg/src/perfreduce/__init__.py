"""Training-data reduction for distributed-dataflow runtime prediction.

Clusters a runtime-measurement dataset down to representative points and
quantifies the accuracy cost via a cross-validated ensemble of runtime models.
"""

from .clustering import (
    ClusteringResult,
    DBSCAN,
    KMEANS,
    KMEDOIDS,
    METHODS,
    dbscan,
    kmeans,
    kmedoids,
    representatives_to_dataset,
)
from .dataset import (
    CATEGORICAL,
    ColumnSpec,
    Dataset,
    DatasetManifest,
    JobRunRecord,
    NUMERIC,
    deduplicate,
    encode,
    load_dataset,
    make_record,
    parse_manifest,
    render_manifest,
    write_csv,
)
from .errors import (
    ContractError,
    ModelUnavailableError,
    ParameterError,
    PerfReduceError,
    RowError,
    SchemaError,
)
from .evaluation import (
    EvaluationReport,
    ExperimentConfig,
    SyntheticSpec,
    TimingReport,
    desk_suite,
    generate_synthetic,
    measure_training_time,
    run_experiment,
)
from .model_io import dump_predictor, load_predictor
from .models import (
    BomModel,
    ErnestModel,
    GbmModel,
    OgbModel,
    TrainedPredictor,
    c3o_select,
    fit_bom,
    fit_ernest,
    fit_gbm,
    fit_ogb,
    mape,
    nnls_solve,
    predict_bom,
    predict_ernest,
    predict_gbm,
    predict_ogb,
)
from .reduction import (
    ContributionDecision,
    ReductionReport,
    ReductionRequest,
    apply_reduction,
    reduce,
    sweep_dbscan,
    validate_contribution,
)

__version__ = "0.1.0"
