import os
import sys
import csv
import logging
import logging.handlers
import argparse
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config, load_run_config
from .materials import MATERIAL_CATALOG, MaterialError, stiffness_from_engineering
from .global_matrix import bound_limits, dispersion_sweep, read_branches_csv, write_branches_csv
from .wavefield import WavefieldFormatError, load_wavefield, measurement_path, save_wavefield, synthesize
from .fk_transform import (assign_modes, default_nu_grid, nudft2, peak_search, read_peaks_csv,
                           save_fkmap, write_peaks_csv)
from .outlier_filter import run_filter, write_report_csv as write_filter_csv
from .compare import compare_all, write_report_csv, write_summary_csv
from .plotting import plot_comparison, plot_dispersion
from .metrics import export_metrics
from .models import RunStats

# ANSI escape codes
BOLD = '\033[1m'
RESET = '\033[0m'

EXIT_OK = 0
EXIT_STAGE_ERROR = 1
EXIT_CONFIG_ERROR = 2

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help="JSON run config (laminate, excitation, path, filter)")
    common.add_argument('--out', type=str, default='out', help="Output directory for every artifact and the log")
    common.add_argument('--settings', type=str, default='lamwave.ini', help="INI file with runtime settings")
    common.add_argument('--fmin', type=float, help="Lowest frequency in Hz")
    common.add_argument('--fmax', type=float, help="Highest frequency in Hz")
    common.add_argument('--df', type=float, help="Frequency step in Hz")
    common.add_argument('--seed', type=int, help="Seed for phases, jitter and noise")
    common.add_argument('--workers', type=int, help="Worker threads (default: machine parallelism)")
    common.add_argument('--format', choices=('csv', 'bin'), help="Container for wavefield and FK map files")

    parser = argparse.ArgumentParser(description="lamwave - guided-wave dispersion of fiber metal laminates")
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('dispersion', parents=[common], help="Compute dispersion branches of the configured laminate")
    synth = sub.add_parser('synth', parents=[common], help="Synthesize a line-scan wavefield")
    synth.add_argument('--ref', type=str, help="Branch CSV to synthesize from (default: compute a sweep)")
    synth.add_argument('--run', type=int, help="Single run index (default: all runs in one record)")
    synth.add_argument('--duration', type=float, help="Record length T in s, overriding the excitation preset")
    extract = sub.add_parser('extract', parents=[common], help="FK transform, peak search and outlier filter")
    extract.add_argument('--wavefield', type=str, required=True, help="Wavefield file (CSV or LWF1)")
    extract.add_argument('--ref', type=str, help="Branch CSV used to label peaks by mode")
    extract.add_argument('--save-map', action='store_true', help="Also write the FK map")
    comp = sub.add_parser('compare', parents=[common], help="Relative phase-velocity differences")
    comp.add_argument('--ref', type=str, required=True, help="Reference branch CSV")
    comp.add_argument('--test', type=str, required=True, help="Test peak CSV or branch CSV")
    sub.add_parser('materials', parents=[common], help="List the material catalog")
    return parser.parse_args(argv)


def setup_logging(config, out_dir):
    handlers = [logging.StreamHandler(sys.stdout)]

    if config.get('LOG_FILE', True):
        log_file = os.path.join(out_dir, 'lamwave.log')
        try:
            file_handler = logging.handlers.RotatingFileHandler(
                log_file, maxBytes=5*1024*1024, backupCount=5, encoding='utf-8', delay=True
            )
            file_handler.setFormatter(logging.Formatter('%(asctime)s [%(levelname)s] %(message)s', datefmt='%d %b %Y | %I:%M:%S %p'))
            handlers.append(file_handler)
        except OSError as e:
            print(f"CRITICAL: Failed to initialize file logging: {e}", file=sys.stderr)

    logging.basicConfig(
        level=getattr(logging, config['LOG_LEVEL'].upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(message)s',
        datefmt='%d %b %Y | %I:%M:%S %p',
        handlers=handlers,
        force=True
    )


@contextmanager
def stage(stats, name):
    """Time a stage; failures other than config/parse errors are re-raised as StageError."""
    with stats.stage(name):
        try:
            yield
        except (ConfigError, WavefieldFormatError, StageError):
            raise
        except Exception as e:
            raise StageError(name, e) from e


def _require_config(args, settings):
    if not args.config:
        raise ConfigError(f"'{args.command}' needs --config")
    overrides = {'fmin': args.fmin, 'fmax': args.fmax, 'df': args.df, 'seed': args.seed,
                 'duration': getattr(args, 'duration', None)}
    return load_run_config(args.config, settings, overrides)


def _read_branches(path):
    try:
        return read_branches_csv(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read branch file {path}: {e}")


def _sweep(run, settings, workers, f_grid):
    return dispersion_sweep(
        run.stack, f_grid,
        scan_points=settings['SCAN_POINTS'],
        cp_range=(settings['CP_MIN'], settings['CP_MAX']),
        root_tolerance=settings['ROOT_TOLERANCE'],
        continuation_window=settings['CONTINUATION_WINDOW'],
        workers=workers)


def _grid(f_min, f_max, df):
    grid = np.arange(f_min, f_max + 0.5 * df, df)
    grid = grid[grid <= f_max * (1 + 1e-12)]
    if grid[-1] < f_max:
        grid = np.append(grid, f_max)
    return grid


def cmd_dispersion(args, settings, stats):
    run = _require_config(args, settings)
    f_grid = _grid(run.sweep['f_min'], run.sweep['f_max'], run.sweep['df'])
    with stage(stats, 'dispersion'):
        branches = _sweep(run, settings, args.workers or settings['WORKERS'], f_grid)
    stats.increment('branches', len(branches))
    with stage(stats, 'write'):
        stats.add_artifact(write_branches_csv(branches, os.path.join(args.out, 'branches.csv')))
        stats.add_artifact(plot_dispersion(branches, os.path.join(args.out, 'dispersion.svg'),
                                           title=run.laminate.describe()))
        cfg = run.filter_config(settings)
        bounds_path = os.path.join(args.out, 'bounds.csv')
        with open(bounds_path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.writer(fh)
            writer.writerow(['mode', 'nu_min_1pm', 'nu_max_1pm', 'fd_min_mhzmm', 'fd_max_mhzmm'])
            for branch in branches:
                limits = bound_limits(branch, cfg.nu_min, cfg.nu_max)
                if limits:
                    writer.writerow([branch.label, cfg.nu_min, cfg.nu_max, *limits])
        stats.add_artifact(bounds_path)
    return EXIT_OK


def cmd_synth(args, settings, stats):
    run = _require_config(args, settings)
    spec = run.excitation
    if args.ref:
        branches = _read_branches(args.ref)
    else:
        with stage(stats, 'dispersion'):
            branches = _sweep(run, settings, args.workers or settings['WORKERS'],
                              _grid(spec.f_min, spec.f_max, spec.df))
    with stage(stats, 'synth'):
        positions = measurement_path(run.path_length, run.spacing, run.jitter, run.seed)
        syn = run.synthesis
        w = synthesize(branches, spec, positions, amp_model=syn.get('amplitudes'),
                       noise_rms=float(syn.get('noise_rms') or 0.0),
                       reflection_coeff=float(syn.get('reflection_coeff') or 0.0),
                       seed=run.seed, run_index=args.run, snr_db=syn.get('snr_db'),
                       attenuation=float(syn.get('attenuation') or 0.0), path_length=run.path_length)
    fmt = args.format or settings['OUTPUT_FORMAT']
    with stage(stats, 'write'):
        name = 'wavefield.lwf' if fmt == 'bin' else 'wavefield.csv'
        stats.add_artifact(save_wavefield(w, os.path.join(args.out, name), fmt))
    return EXIT_OK


def _extraction_grid(run, w):
    """Comb tones of the record; the wavefield's own header wins over the run config."""
    spec = run.excitation
    recorded = {key: w.meta[key] for key in ('f_min', 'f_max', 'df', 'run_shift', 'n_runs') if key in w.meta}
    if recorded:
        try:
            spec = replace(spec, **recorded, sample_rate=w.sample_rate)
        except (TypeError, ValueError) as e:
            logger.warning(f"⚠️ Ignoring the comb stored in the wavefield header: {e}")
    run_index = w.meta.get('run_index', 'all')
    freqs = spec.combined_comb() if run_index == 'all' else spec.comb(int(run_index))
    return freqs[freqs <= w.sample_rate / 2]


def cmd_extract(args, settings, stats):
    run = _require_config(args, settings)
    try:
        w = load_wavefield(args.wavefield)
    except OSError as e:
        raise ConfigError(f"Cannot read wavefield {args.wavefield}: {e}")
    branches = _read_branches(args.ref) if args.ref else None
    workers = args.workers or settings['WORKERS']
    with stage(stats, 'transform'):
        fk = nudft2(w, _extraction_grid(run, w), default_nu_grid(w, settings['NU_OVERSAMPLE']), workers)
    with stage(stats, 'peaks'):
        peaks = peak_search(fk, settings['PEAKS_PER_FREQUENCY'], settings['PROMINENCE_FLOOR'])
        labelled = assign_modes(peaks, branches, tuple(settings['MODES']))
    stats.increment('peaks', len(peaks))
    cfg = run.filter_config(settings, w.min_spacing)
    with stage(stats, 'filter'):
        report = run_filter(labelled, cfg, workers)
    stats.increment('kept', len(report.kept))
    stats.increment('rejected', len(report.rejected))
    kept_modes = {p.mode for p in report.kept}
    for mode in settings['MODES']:
        if mode not in kept_modes:
            stats.add_warning(f"No {mode} peaks survived the filter")
    with stage(stats, 'write'):
        stats.add_artifact(write_peaks_csv(labelled, os.path.join(args.out, 'peaks_raw.csv')))
        stats.add_artifact(write_peaks_csv(report.kept, os.path.join(args.out, 'peaks.csv')))
        stats.add_artifact(write_filter_csv(report, cfg, os.path.join(args.out, 'filter_report.csv')))
        if args.save_map:
            fmt = args.format or settings['OUTPUT_FORMAT']
            name = 'fkmap.lfk' if fmt == 'bin' else 'fkmap.csv'
            stats.add_artifact(save_fkmap(fk, os.path.join(args.out, name), fmt))
    return EXIT_OK


def _read_test(path):
    try:
        with open(path, newline='', encoding='utf-8') as fh:
            header = next(csv.reader(fh), [])
        return read_branches_csv(path) if 'k_radpm' in header else read_peaks_csv(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read test file {path}: {e}")


def cmd_compare(args, settings, stats):
    ref = _read_branches(args.ref)
    test = _read_test(args.test)
    thickness = _require_config(args, settings).thickness if args.config else None
    with stage(stats, 'compare'):
        report = compare_all(ref, test, tuple(settings['MODES']), thickness)
    stats.increment('compared_points', len(report.rows))
    with stage(stats, 'write'):
        stats.add_artifact(write_report_csv(report, os.path.join(args.out, 'comparison.csv')))
        stats.add_artifact(write_summary_csv(report, os.path.join(args.out, 'comparison_summary.csv')))
        stats.add_artifact(plot_comparison(report, os.path.join(args.out, 'comparison.svg')))
    for s in report.summaries().values():
        print(f"{s.mode}: n={s.count} mean |rel diff|={100 * s.mean_abs:.3f}% max={100 * s.max_abs:.3f}% "
              f"over {s.fd_lo:.3f}-{s.fd_hi:.3f} MHz*mm")
    return EXIT_OK


def cmd_materials(args, settings, stats):
    print(f"{BOLD}{'name':<14}{'E1':>8}{'E2':>8}{'G12':>7}{'G23':>7}{'nu12':>7}{'nu23':>7}{'rho':>7}{'t/mm':>7}  symmetry{RESET}")
    for rec in MATERIAL_CATALOG.values():
        try:
            symmetry = stiffness_from_engineering(rec).symmetry
        except MaterialError as e:
            symmetry = f"invalid ({e})"
        print(f"{rec.name:<14}{rec.E1:>8g}{rec.E2:>8g}{rec.G12:>7g}{rec.G23:>7g}{rec.nu12:>7g}{rec.nu23:>7g}"
              f"{rec.density:>7g}{rec.ply_thickness:>7g}  {symmetry}")
    return EXIT_OK


COMMANDS = {
    'dispersion': cmd_dispersion,
    'synth': cmd_synth,
    'extract': cmd_extract,
    'compare': cmd_compare,
    'materials': cmd_materials,
}


def run(argv=None):
    args = parse_args(argv)
    settings = load_config(args.settings)
    os.makedirs(args.out, exist_ok=True)
    setup_logging(settings, args.out)
    stats = RunStats(settings)
    logger.info(f"Starting lamwave {args.command}")

    code = EXIT_OK
    try:
        code = COMMANDS[args.command](args, settings, stats)
        logger.info(f"✅ {args.command} finished")
    except (ConfigError, WavefieldFormatError, MaterialError) as e:
        stats.add_error(str(e))
        logger.error(f"❌ {e}")
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_CONFIG_ERROR
    except StageError as e:
        stats.add_error(str(e))
        logger.error(f"❌ {e}")
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_STAGE_ERROR
    except KeyboardInterrupt:
        logger.info("🛑 Interrupted")
        code = EXIT_STAGE_ERROR
    except Exception as e:
        stats.add_error(str(e))
        logger.exception(f"❌ Unexpected failure in {args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_STAGE_ERROR
    finally:
        if settings.get('METRICS_TEXTFILE'):
            stats.add_artifact(export_metrics(args.out))
        stats.log_summary()
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == '__main__':
    main()
