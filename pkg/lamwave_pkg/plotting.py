import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

logger = logging.getLogger(__name__)

# Stable element ids and no timestamp, so reruns give identical SVG bytes
matplotlib.rcParams['svg.hashsalt'] = 'lamwave'
_SVG_METADATA = {'Date': None}


def _save(fig, path):
    fig.savefig(path, format='svg', metadata=_SVG_METADATA, bbox_inches='tight')
    plt.close(fig)
    logger.info(f"Wrote plot {path}")
    return path


def plot_dispersion(branches, path, title=None):
    """Phase velocity over frequency-thickness, one line per branch."""
    fig, ax = plt.subplots(figsize=(8, 5))
    for branch in branches:
        style = '--' if branch.label.startswith(('SSH', 'ASH', 'SH')) else '-'
        ax.plot(branch.fd, branch.phase_velocities, style, linewidth=1.2, label=branch.label)
    ax.set_xlabel('f·d (MHz·mm)')
    ax.set_ylabel('c_p (m/s)')
    if title:
        ax.set_title(title)
    ax.grid(True, linestyle='--', alpha=0.6)
    if branches:
        ax.legend(fontsize=8, ncol=2)
    return _save(fig, path)


def plot_comparison(report, path, title=None):
    """Two panels: both phase-velocity sets on top, relative difference in % below."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for mode in report.modes:
        rows = [r for r in report.rows if r.mode == mode]
        fd = [r.fd for r in rows]
        top.plot(fd, [r.c_ref for r in rows], '-', linewidth=1.2, label=f'{mode} reference')
        top.plot(fd, [r.c_test for r in rows], '.', markersize=3, label=f'{mode} test')
        bottom.plot(fd, [100 * r.rel_diff for r in rows], '.', markersize=3, label=mode)
    top.set_ylabel('c_p (m/s)')
    bottom.set_ylabel('relative difference (%)')
    bottom.set_xlabel('f·d (MHz·mm)')
    bottom.axhline(0.0, color='k', linewidth=0.8)
    for ax in (top, bottom):
        ax.grid(True, linestyle='--', alpha=0.6)
        ax.legend(fontsize=8)
    if title:
        top.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
