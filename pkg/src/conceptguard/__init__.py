"""Concept-level backdoor attacks and a partitioned-ensemble certified defense
for concept-to-label classifiers."""

from .attack import (
    MODE_CAT,
    MODE_CAT_PLUS,
    AttackConfig,
    Trigger,
    attack_test_set,
    embed_trigger,
    poison_dataset,
    read_trigger,
    select_trigger,
    select_trigger_cat,
    select_trigger_cat_plus,
    write_trigger,
    zscore,
)
from .certify import (
    CertificationReport,
    SampleRecord,
    adversarial_joint_accuracy,
    build_certification_report,
    certified_size,
    flip_oracle,
    independent_certified_accuracy,
    joint_certified_accuracy,
    joint_condition,
    make_records,
    records_from_predictions,
)
from .clustering import (
    GroupAssignment,
    SubDataset,
    embed_concepts,
    identity_assignment,
    kmeans_cluster,
    partition_dataset,
    read_assignment,
    write_assignment,
)
from .data import (
    ConceptDataset,
    ConceptVocabulary,
    DatasetFormatError,
    Sample,
    SyntheticSpec,
    dataset_polarity,
    generate_synthetic,
    load_dataset,
    load_vocabulary,
    save_dataset,
    save_vocabulary,
    split_dataset,
)
from .harness import (
    ExperimentConfig,
    MetricsRow,
    PipelineError,
    experiment_config,
    metric_accuracy,
    metric_asr,
    read_config_file,
    run_pipeline,
    sweep_axis,
    write_metrics_csv,
)
from .models import (
    BaseClassifier,
    EnsembleModel,
    TrainingConfig,
    VoteCounts,
    ensemble_predict,
    ensemble_predict_matrix,
    group_prediction_matrix,
    load_ensemble,
    save_ensemble,
    train_base,
    train_direct,
    train_ensemble,
    vote_counts,
)

__version__ = "0.1.0"
