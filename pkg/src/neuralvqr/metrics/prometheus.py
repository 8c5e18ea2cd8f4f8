"""
Prometheus metrics for neuralvqr
"""

from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest


# Create a custom registry
registry = CollectorRegistry()

# Conjugate solver metrics
conjugate_solves_total = Counter(
    'neuralvqr_conjugate_solves_total',
    'Total number of conjugate solves by termination status',
    ['status'],  # gradient, objective, stalled, max_iter
    registry=registry
)

conjugate_iterations = Histogram(
    'neuralvqr_conjugate_iterations',
    'L-BFGS iterations per conjugate solve',
    buckets=[0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
    registry=registry
)

# Training metrics
training_steps_total = Counter(
    'neuralvqr_training_steps_total',
    'Total number of optimizer steps',
    ['method'],
    registry=registry
)

training_aborts_total = Counter(
    'neuralvqr_training_aborts_total',
    'Training runs aborted on a NaN objective',
    ['method'],
    registry=registry
)

epoch_duration = Histogram(
    'neuralvqr_epoch_duration_seconds',
    'Wall time of one training epoch',
    buckets=[0.1, 0.5, 1, 2, 5, 10, 30, 60, 120, 300],
    registry=registry
)

# Conformal metrics
calibrations_total = Counter(
    'neuralvqr_calibrations_total',
    'Total number of conformal calibrations',
    ['method'],
    registry=registry
)

calibration_failed_points_total = Counter(
    'neuralvqr_calibration_failed_points_total',
    'Calibration points whose score was set conservatively',
    ['method'],
    registry=registry
)

# Serving metrics
api_requests_total = Counter(
    'neuralvqr_api_requests_total',
    'Total number of model API requests',
    ['endpoint', 'outcome'],
    registry=registry
)


def get_metrics_text() -> str:
    """Get Prometheus metrics in text format"""
    return generate_latest(registry).decode('utf-8')
