"""Labelled feature tables and their CSV form (``volume_id,label,f0,...``)."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .utils import atomic_write_text, format_float, read_csv_lines


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y).astype(int)
        ids = tuple(str(i) for i in self.ids)
        if X.shape[0] != len(y) or len(y) != len(ids):
            raise ValueError(f"inconsistent lengths: X {X.shape[0]}, y {len(y)}, ids {len(ids)}")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.y[idx], [self.ids[i] for i in idx])

    def sorted_by_id(self) -> "LabeledDataset":
        return self.take(np.argsort(np.array(self.ids), kind="stable"))


def features_to_csv(data: LabeledDataset, comment: str | None = None) -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(["volume_id", "label", *(f"f{k}" for k in range(data.n_features))]))
    for vid, label, row in zip(data.ids, data.y, data.X):
        lines.append(",".join([vid, str(int(label)), *(format_float(v) for v in row)]))
    return "\n".join(lines) + "\n"


def write_features_csv(data: LabeledDataset, path: str | os.PathLike, comment: str | None = None) -> None:
    atomic_write_text(path, features_to_csv(data, comment))


def read_features_csv(path: str | os.PathLike) -> LabeledDataset:
    _, lines = read_csv_lines(path)
    reader = csv.reader(lines)
    header = next(reader)
    if header[:2] != ["volume_id", "label"]:
        raise ValueError(f"{path}: expected header starting with volume_id,label")
    ids, labels, rows = [], [], []
    for rec in reader:
        ids.append(rec[0])
        labels.append(int(rec[1]))
        rows.append([float(v) for v in rec[2:]])
    return LabeledDataset(np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 2), labels, ids)
