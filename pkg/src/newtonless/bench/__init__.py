from .datasets import cosine_features, gen_coherent, read_matrix, synthetic_problem, write_matrix
from .experiments import (
    CellReport,
    ExperimentPlan,
    RateReport,
    estimate_deff,
    lambda_for_deff,
    read_report_csv,
    read_trace_csv,
    report_from_trace_rows,
    run_plan,
)
