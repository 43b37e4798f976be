from .fitting import (
    MIN_RECORDS,
    RecordStore,
    TimeModelFit,
    TrainingRecord,
    batch_count_fit,
    fit_arrays,
    fit_time_model,
    predict_time,
)
from .policies import (
    POLICIES,
    PlacementPlan,
    assign_batch_uniform,
    assign_learning_based,
    assign_round_robin,
    assign_sorted_round_robin,
    place,
)
