# Copyright 2024-present, the mixsel developers
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################

from __future__ import annotations

import csv
import logging

import numpy as np
import pandas as pd

from mixsel.errors import DatasetError, MissingVariableError

__all__ = ["Dataset", "load_csv"]

logger = logging.getLogger('mixsel')

def _level_label(value):
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return str(int(value))
    return str(value)


class Dataset():
    """Named columns, each numeric or categorical.

    Categorical levels are ordered by first appearance in the data.

    :param frame: Columns of the dataset
    :type frame: :class:`pandas.DataFrame` or dict
    :param factors: Names of columns to treat as categorical, whatever
        their content
    :type factors: list, optional
    """

    def __init__(self, frame, factors=None):
        if not isinstance(frame, pd.DataFrame):
            frame = pd.DataFrame(frame)
        frame = frame.reset_index(drop=True)
        columns = {}
        for name in frame.columns:
            col = frame[name]
            if isinstance(col.dtype, pd.CategoricalDtype):
                columns[name] = col
            elif pd.api.types.is_bool_dtype(col) or \
                    pd.api.types.is_numeric_dtype(col):
                columns[name] = col.astype(float)
            else:
                columns[name] = self._as_categorical(col)
        self.frame = pd.DataFrame(columns, index=frame.index)
        if factors:
            self.frame = self.factorize(factors).frame

    @staticmethod
    def _as_categorical(col):
        values = col.map(_level_label).to_numpy(dtype=object)
        return pd.Series(pd.Categorical(values, categories=pd.unique(values)),
                index=col.index)

    @property
    def n(self):
        return len(self.frame)

    @property
    def columns(self):
        return list(self.frame.columns)

    def __len__(self):
        return self.n

    def __contains__(self, name):
        return name in self.frame.columns

    def _get(self, name):
        if name not in self.frame.columns:
            raise MissingVariableError("Variable {} not in dataset".format(name))
        return self.frame[name]

    def is_categorical(self, name):
        return isinstance(self._get(name).dtype, pd.CategoricalDtype)

    def column(self, name):
        """Values of a numeric column as a float array."""
        col = self._get(name)
        if self.is_categorical(name):
            raise DatasetError("Column {} is categorical".format(name))
        return col.to_numpy(dtype=float)

    def levels(self, name):
        col = self._get(name)
        if not self.is_categorical(name):
            raise DatasetError("Column {} is not categorical".format(name))
        return [str(l) for l in col.cat.categories]

    def codes(self, name):
        """Integer level codes of a categorical column."""
        col = self._get(name)
        if not self.is_categorical(name):
            raise DatasetError("Column {} is not categorical".format(name))
        return col.cat.codes.to_numpy(dtype=np.int64)

    def factorize(self, names):
        """Copy of the dataset with the named columns made categorical.

        Numeric identifiers keep their printed form as level labels.
        """
        frame = self.frame.copy()
        for name in names:
            col = self._get(name)
            if isinstance(col.dtype, pd.CategoricalDtype):
                continue
            frame[name] = self._as_categorical(col)
        return Dataset(frame)

    def with_column(self, name, values):
        frame = self.frame.copy()
        frame[name] = values
        return Dataset(frame)

    def __str__(self):
        return "Dataset({} rows: {})".format(self.n, ", ".join(self.columns))


def _short_record(path, width):
    # pandas pads short records, so count the fields of every record
    with open(path, newline='', encoding='utf-8') as fh:
        records = [r for r in csv.reader(fh) if r]
    for line, record in enumerate(records[1:], start=1):
        if len(record) < width:
            return line
    return None


def load_csv(path, factors=None):
    """Read an RFC 4180 CSV file with a header row.

    Columns whose every cell parses as a number become numeric, all others
    categorical. Row order is preserved.

    :param path: Location of the file
    :param factors: Columns to force to categorical
    :type factors: list, optional
    :rtype: :class:`Dataset`
    :raises DatasetError: For empty files, files without data rows, duplicate
        headers, ragged rows and missing cells
    """
    read_opts = dict(dtype=str, keep_default_na=False, na_filter=False,
            skipinitialspace=False, encoding='utf-8')
    # header row read as data so that rows longer than it fail to parse
    try:
        raw = pd.read_csv(path, header=None, on_bad_lines='error', **read_opts)
    except pd.errors.EmptyDataError:
        raise DatasetError("{}: empty file".format(path))
    except pd.errors.ParserError as e:
        raise DatasetError("{}: ragged row ({})".format(path, e))

    names = [str(n).strip() for n in raw.iloc[0].tolist()]
    dupes = sorted(set(n for n in names if names.count(n) > 1))
    if dupes:
        raise DatasetError("{}: duplicate headers {}".format(path,
            ", ".join(dupes)))
    if any(n == '' for n in names):
        raise DatasetError("{}: empty header".format(path))

    raw = raw.iloc[1:].reset_index(drop=True)
    raw.columns = names
    if len(raw) == 0:
        raise DatasetError("{}: no data rows".format(path))
    line = _short_record(path, len(names))
    if line is not None:
        raise DatasetError("{}: ragged row at data line {}".format(path, line))

    columns = {}
    for name in names:
        col = raw[name].str.strip()
        if (col == '').any():
            raise DatasetError("{}: missing value in column {}".format(path, name))
        numeric = pd.to_numeric(col, errors='coerce')
        if numeric.notna().all():
            columns[name] = numeric.astype(float)
        else:
            columns[name] = col
    logger.debug("Loaded {} rows from {}".format(len(raw), path))
    return Dataset(pd.DataFrame(columns), factors=factors)
