import os
import logging

from prometheus_client import Counter, Gauge, Histogram, REGISTRY, write_to_textfile

logger = logging.getLogger(__name__)

# Define Metrics
CHARACTERISTIC_EVALUATIONS_TOTAL = Counter('lamwave_characteristic_evaluations_total', 'Global-matrix determinant evaluations')
ROOTS_FOUND_TOTAL = Counter('lamwave_roots_found_total', 'Dispersion roots accepted after refinement')
SPURIOUS_ROOTS_TOTAL = Counter('lamwave_spurious_roots_total', 'Refined minima discarded as bulk-wave or shallow')
MISSED_ROOTS_TOTAL = Counter('lamwave_missed_roots_total', 'Branch continuation steps without a matching root')
ACTIVE_BRANCHES = Gauge('lamwave_active_branches', 'Branches open during the last continuation pass')
PEAKS_EXTRACTED_TOTAL = Counter('lamwave_peaks_extracted_total', 'Frequency-wavenumber peaks found by peak search')
PEAKS_REJECTED_TOTAL = Counter('lamwave_peaks_rejected_total', 'Peaks rejected by the outlier filter', ['reason'])
SWEEP_DURATION_SECONDS = Histogram('lamwave_sweep_duration_seconds', 'Time spent in a dispersion sweep')
TRANSFORM_DURATION_SECONDS = Histogram('lamwave_transform_duration_seconds', 'Time spent in the 2D non-uniform DFT')


def export_metrics(out_dir):
    """Write the default registry as a node-exporter textfile inside out_dir."""
    path = os.path.join(out_dir, 'metrics.prom')
    try:
        write_to_textfile(path, REGISTRY)
        logger.info(f"📈 Metrics written to {path}")
        return path
    except OSError as e:
        logger.error(f"Failed to write metrics file {path}: {e}")
        return None
