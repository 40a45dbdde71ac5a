import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import SchemaError
from .evaluation import Trajectory


logger = logging.getLogger()

PLOT_PARAMS = {
    'svg.hashsalt': 'legfusion',
    'svg.fonttype': 'none',
    'font.size': 9,
    'axes.labelsize': 9,
    'legend.fontsize': 8,
    'lines.linewidth': 1.2,
    'lines.markersize': 4,
    'figure.dpi': 100,
    }
GT_STYLE = dict(color='0.4', linestyle='--')


def plot_trajectories(trajectories:list[tuple[str, Trajectory]],
                      out:str,
                      gt:Trajectory = None,
                      diagnostics:pd.DataFrame = None) -> str:
    '''
    Static SVG with the XY top view of the trajectories

    Every trajectory is drawn as one polyline (a single marker when it has
    one pose) with an equal-aspect axis. With diagnostics, a strip of the
    smoothed degeneracy index against time is added below.

    Parameters
    ----------
    trajectories : list[tuple[str, Trajectory]]
        Labelled estimated trajectories
    out : str
        Output SVG file
    gt : Trajectory, optional
        Ground truth, drawn dashed
    diagnostics : pd.DataFrame, optional
        diagnostics.csv table, needs the 't' and 'd_smooth' columns

    Returns
    -------
    str
        Path of the written SVG
    '''
    if diagnostics is not None and not {'t', 'd_smooth'} <= set(diagnostics.columns):
        raise SchemaError(f"Diagnostics table lacks 't' / 'd_smooth' columns: {list(diagnostics.columns)}")
    with plt.rc_context(PLOT_PARAMS):
        if diagnostics is not None:
            fig, (ax, ax_d) = plt.subplots(2, 1, figsize=(6.0, 7.0), gridspec_kw={'height_ratios': [3, 1]})
        else:
            fig, ax = plt.subplots(figsize=(6.0, 5.0))
            ax_d = None
        if gt is not None and len(gt):
            line, = ax.plot(gt.p[:, 0], gt.p[:, 1], label='ground truth', **GT_STYLE)
            line.set_gid('gt')
        for i, (label, traj) in enumerate(trajectories):
            marker = 'o' if len(traj) == 1 else None
            line, = ax.plot(traj.p[:, 0], traj.p[:, 1], marker=marker, label=label)
            line.set_gid(f"trajectory_{i}")
        ax.set_aspect('equal', adjustable='datalim')
        ax.set_xlabel('x (m)')
        ax.set_ylabel('y (m)')
        ax.legend(loc='best')
        if ax_d is not None:
            ax_d.plot(diagnostics['t'].to_numpy(), diagnostics['d_smooth'].to_numpy(), color='C3')
            ax_d.set_ylim(0.0, 1.0)
            ax_d.set_xlabel('t (s)')
            ax_d.set_ylabel('smoothed degeneracy')
        fig.tight_layout()
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        tmp = f"{out}.tmp"
        fig.savefig(tmp, format='svg', metadata={'Date': None})
        plt.close(fig)
    os.replace(tmp, out)
    logger.debug(f"Plot written to {out}")
    return out

def polyline_extent(traj:Trajectory) -> np.ndarray:
    '''(width, height) of the XY bounding box'''
    return np.ptp(traj.p[:, :2], axis=0)
