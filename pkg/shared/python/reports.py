"""
Module providing tabular report writers: training curves, modality ablation and pruning tables as CSV.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd


# ------------------------------
#    CLASSES
# ------------------------------

class CurveSet:
    """
    Per-epoch scalar series from a training log, written as one (step, value) CSV per series.
    """

    # ------------------------------
    #    CONSTRUCTOR
    # ------------------------------

    def __init__(self, stage: str, records: list[dict], smoothing: int = 1) -> None:
        """
        Initialize the CurveSet with epoch records.

        Args:
            stage (str): Stage name used as the file prefix.
            records (list[dict]): One dictionary per epoch, as written to the stage log.
            smoothing (int, optional): Trailing moving-average window for an extra smoothed column. Defaults to 1 (off).
        """
        self.stage = stage
        self.records = records
        self.smoothing = smoothing


    # ------------------------------
    #    PUBLIC METHODS
    # ------------------------------

    def series(self) -> list[str]:
        """
        Numeric keys present in the records, excluding the epoch counter.
        """
        keys = []
        for record in self.records:
            for key, value in record.items():
                if key != 'epoch' and key not in keys and isinstance(value, (int, float)) and not isinstance(value, bool):
                    keys.append(key)
        return keys

    def frame(self, key: str) -> pd.DataFrame:
        df = pd.DataFrame([{'step': r.get('epoch', i), 'value': r.get(key, np.nan)} for i, r in enumerate(self.records)])

        if self.smoothing > 1 and not df.empty:
            df['smoothed'] = df['value'].rolling(self.smoothing, min_periods = 1).mean()

        return df

    def write(self, directory: str | Path) -> list[Path]:
        """
        Write `<stage>_<series>.csv` files into `directory`.

        Returns:
            list[Path]: The files written.
        """
        directory = Path(directory)
        directory.mkdir(parents = True, exist_ok = True)
        written = []

        for key in self.series():
            path = directory / f'{self.stage}_{key}.csv'
            self.frame(key).to_csv(path, index = False, float_format = '%.8f')
            written.append(path)

        return written


# ------------------------------
#    PUBLIC METHODS
# ------------------------------

def write_ablation(path: str | Path, rows: Sequence[dict]) -> pd.DataFrame:
    """
    Test WER with each track removed, plus the unablated baseline and the difference to it.
    """
    df = pd.DataFrame(list(rows), columns = ['track', 'wer'])
    baseline = df.loc[df['track'] == 'none', 'wer']
    df['delta'] = df['wer'] - (baseline.iloc[0] if not baseline.empty else np.nan)
    df.to_csv(path, index = False, float_format = '%.6f')
    return df

def write_prune_report(path: str | Path, rows: Sequence[dict], track_importance: dict[str, float] | None = None) -> pd.DataFrame:
    """
    Per-dimension variance and keep flag; per-track input importance is appended as extra rows when given.
    """
    df = pd.DataFrame(list(rows), columns = ['dimension', 'variance', 'kept'])
    df.insert(0, 'kind', 'dimension')

    if track_importance:
        total = sum(track_importance.values()) or 1.0
        extra = pd.DataFrame([{'kind': 'track', 'dimension': track, 'variance': share / total, 'kept': np.nan}
                              for track, share in track_importance.items()])
        df = pd.concat([df, extra], ignore_index = True)

    df.to_csv(path, index = False, float_format = '%.8f')
    return df
