from .design import (CountyEstimate, ModelEstimator, OracleEstimator, Settings, assign_folds, kfold_cv,
                     run_design)
from .metrics import CvMetrics, MetricsRecord, county_metrics, cv_metrics, freq_interval
from .population import SimPopulation, draw_sample, generate_population
