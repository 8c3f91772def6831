"""
Flat-file artifacts of a simulation: diagnostics and snapshot CSVs, the
sweep summary index and optional SVG plots.
"""

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

DIAGNOSTICS_COLUMNS = ('step', 't', 'entropy_raw', 'entropy_normalized', 'mass1', 'mass2',
                       'min_u3', 'dissipation', 'newton_iters', 'tau')
SNAPSHOT_COLUMNS = ('x', 'u1', 'u2', 'w1', 'w2')

# fixed ids and no timestamp so reruns produce identical SVG files
matplotlib.rcParams['svg.hashsalt'] = 'crossdiff'
SVG_METADATA = {'Date': None}


def format_value(value):
    if isinstance(value, (bool, int)):
        return str(int(value))
    return '%.17g' % value


def write_rows(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value) for value in row])


def select_records(records, cadence):
    """Every cadence-th record plus the last one"""
    chosen = [record for record in records if record.step % cadence == 0]
    if records and (not chosen or chosen[-1] is not records[-1]):
        chosen.append(records[-1])
    return chosen


def write_diagnostics(path, initial, trajectory, cadence=1):
    records = [initial] + list(trajectory)
    write_rows(path, DIAGNOSTICS_COLUMNS, (record.as_row() for record in select_records(records, cadence)))


def write_snapshot(path, state):
    x = state.grid.centers
    rows = zip(x, state.u1, state.u2, state.w[:, 0], state.w[:, 1])
    write_rows(path, SNAPSHOT_COLUMNS, ((float(v) for v in row) for row in rows))


def plot_entropy(path, initial, trajectory):
    records = [initial] + list(trajectory)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.t for r in records], [r.entropy_normalized for r in records], color='tab:blue')
    ax.set_xlabel('t')
    ax.set_ylabel('normalized entropy')
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)


def plot_profiles(path, state):
    x = state.grid.centers
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, state.u1, label='u1')
    ax.plot(x, state.u2, label='u2')
    ax.plot(x, state.u3, label='u3', linestyle='--')
    ax.set_xlabel('x')
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f't = {state.t:.6g}')
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)


def write_run(directory, config, result):
    """Write every artifact of one run; returns the paths written"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    path = directory / 'diagnostics.csv'
    write_diagnostics(path, result.initial_diagnostics, result.trajectory, config.cadence)
    written.append(path)

    path = directory / 'initial.csv'
    write_snapshot(path, result.initial)
    written.append(path)

    if result.trajectory:
        path = directory / 'final.csv'
        write_snapshot(path, result.final)
        written.append(path)

    if config.plots:
        path = directory / 'entropy.svg'
        plot_entropy(path, result.initial_diagnostics, result.trajectory)
        written.append(path)
        path = directory / 'profiles.svg'
        plot_profiles(path, result.final)
        written.append(path)

    logger.info(f"Wrote {len(written)} files to {directory}")
    return written


def write_summary(path, entries):
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(entries, fh, indent=2)
        fh.write('\n')
