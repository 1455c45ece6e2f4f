"""Input data containers: longitudinal panel and survival outcomes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LongitudinalPanel:
    """Long-format biomarker panel.

    Rows are grouped by subject and sorted by time within subject.  Entries
    below a detection limit are stored as the limit itself with ``censored``
    set; their augmented values live in the sampler state, not here.

    Attributes
    ----------
    subject : ndarray of int, shape (n_obs,)
        Subject index ``0..N-1`` for each row.
    time : ndarray, shape (n_obs,)
    values : ndarray, shape (n_obs, Q)
    censored : ndarray of bool, shape (n_obs, Q)
    lod : ndarray, shape (Q,)
        Detection limits, ``-inf`` for biomarkers without one.
    """

    subject: np.ndarray
    time: np.ndarray
    values: np.ndarray
    censored: np.ndarray
    lod: np.ndarray

    def __post_init__(self):
        subject = np.asarray(self.subject, dtype=np.int64)
        time = np.asarray(self.time, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != time.shape[0]:
            values = values.T
        censored = np.asarray(self.censored, dtype=bool).reshape(values.shape)
        lod = np.asarray(self.lod, dtype=float).reshape(-1)
        for name, arr in (("subject", subject), ("time", time), ("values", values),
                          ("censored", censored), ("lod", lod)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if lod.shape[0] != values.shape[1]:
            raise ValueError("one detection limit per biomarker is required")
        if subject.shape != time.shape:
            raise ValueError("subject and time must have the same length")
        if np.any(np.diff(subject) < 0) or subject[0] != 0:
            raise ValueError("rows must be grouped by subject with indices 0..N-1")
        if np.any(np.diff(np.unique(subject)) != 1):
            raise ValueError("subject indices must be contiguous")
        same = np.diff(subject) == 0
        if np.any(np.diff(time)[same] <= 0):
            raise ValueError("visit times must be strictly increasing within subject")
        if not np.all(np.isfinite(time)):
            raise ValueError("visit times must be finite")
        if np.any(censored & ~np.isfinite(lod)[None, :]):
            raise ValueError("censored entry on a biomarker without a detection limit")
        if not np.all(np.isfinite(values[~censored])):
            raise ValueError("observed biomarker values must be finite")
        if np.any(values[censored] != np.broadcast_to(lod, values.shape)[censored]):
            raise ValueError("censored entries must store the detection limit")

    @classmethod
    def from_subjects(cls, times, values, censored, lod) -> "LongitudinalPanel":
        """Build from per-subject lists of time vectors and ``(n_i, Q)`` matrices."""
        subject = np.concatenate([np.full(len(t), i) for i, t in enumerate(times)])
        return cls(subject, np.concatenate(times),
                   np.vstack([np.reshape(v, (len(t), -1)) for t, v in zip(times, values)]),
                   np.vstack([np.reshape(c, (len(t), -1)) for t, c in zip(times, censored)]),
                   lod)

    @property
    def N(self) -> int:
        return int(self.subject[-1]) + 1

    @property
    def Q(self) -> int:
        return self.values.shape[1]

    @property
    def n_obs(self) -> int:
        return self.time.shape[0]

    @property
    def visits_per_subject(self) -> np.ndarray:
        return np.bincount(self.subject, minlength=self.N)

    def subject_rows(self, i: int) -> slice:
        start = np.searchsorted(self.subject, i, side="left")
        stop = np.searchsorted(self.subject, i, side="right")
        return slice(int(start), int(stop))

    def censored_index(self):
        """Row and column indices of censored entries, row-major order."""
        return np.nonzero(self.censored)

    def take(self, subjects) -> "LongitudinalPanel":
        """Panel restricted to (and reindexed by) the given subjects, in order."""
        rows = [np.arange(*self.subject_rows(int(i)).indices(self.n_obs)) for i in subjects]
        new_subject = np.concatenate([np.full(len(r), k) for k, r in enumerate(rows)])
        rows = np.concatenate(rows)
        return LongitudinalPanel(new_subject, self.time[rows], self.values[rows],
                                 self.censored[rows], self.lod)


@dataclass(frozen=True)
class SurvivalRecord:
    """Outcome of one subject: event or censoring time, indicator and covariates."""

    time: float
    event: int
    covariates: np.ndarray = np.zeros(0)

    def __post_init__(self):
        if not (np.isfinite(self.time) and self.time > 0):
            raise ValueError("survival time must be finite and > 0")
        if self.event not in (0, 1):
            raise ValueError("event indicator must be 0 or 1")


@dataclass(frozen=True)
class SurvivalData:
    """Column-wise survival outcomes for ``N`` subjects."""

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event, dtype=np.int64)
        cov = np.asarray(self.covariates, dtype=float).reshape(time.shape[0], -1)
        for name, arr in (("time", time), ("event", event), ("covariates", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise ValueError("survival times must be finite and > 0")
        if not np.all(np.isin(event, (0, 1))):
            raise ValueError("event indicators must be 0 or 1")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates must be finite")

    @property
    def N(self) -> int:
        return self.time.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(float(self.time[i]), int(self.event[i]), self.covariates[i])

    def take(self, subjects) -> "SurvivalData":
        idx = np.asarray(subjects, dtype=np.int64)
        return SurvivalData(self.time[idx], self.event[idx], self.covariates[idx])


@dataclass(frozen=True)
class Dataset:
    panel: LongitudinalPanel
    survival: SurvivalData

    def __post_init__(self):
        if self.panel.N != self.survival.N:
            raise ValueError("panel and survival data disagree on the number of subjects")

    @property
    def N(self) -> int:
        return self.panel.N

    def take(self, subjects) -> "Dataset":
        return Dataset(self.panel.take(subjects), self.survival.take(subjects))
