# -*- coding: utf-8 -*-
"""
Title:        srsq_utils.py
Description:  Output, figure-data and table utilities for simulation results
Date:         2026-10-18
Version:      1.0.0
License:      MIT
"""

from typing import Optional, Dict, Any, List, Sequence
import json
import logging
import math
import os
import re
import tempfile

import pandas as pd

from scripts.srsq_backend import SamplingError
from scripts.design import ROLES
from scripts.metrics import ComparisonReport, DiffReport, MethodSummary, MEASURES, COUNT_FIELDS

logger = logging.getLogger(__name__)

METRICS_COLUMNS = (
    'population', 'N', 'permutation', 'method', 'role', 'bias_signed', 'bias_abs', 'variance', 'mse',
    'contacted', 'excluded', 'invited', 'declined', 'agreed', 'achieved_n', 'feasible',
)

AVERAGED_LABEL = 'mean'


class ResultsError(SamplingError):
    """Raised when a results directory is missing or incomplete"""
    pass


class PathUtils:
    """Stable, filesystem-safe names for output artifacts"""

    @staticmethod
    def slug(name: str) -> str:
        """
        Examples:
            >>> PathUtils.slug("South Dakota")
            'South_Dakota'
            >>> PathUtils.slug("../etc")
            'etc'
        """
        cleaned = re.sub(r'[^A-Za-z0-9._-]+', '_', name).strip('._')
        return cleaned or 'population'

    @staticmethod
    def permutation_dir(row: int, code: str) -> str:
        return f'perm{row}_{code}'


class OutputUtils:
    """Deterministic artifact writing"""

    @staticmethod
    def dumps(data: Any) -> str:
        return json.dumps(OutputUtils.clean(data), sort_keys=True, indent=2) + '\n'

    @staticmethod
    def dumps_line(data: Any) -> str:
        """One compact JSON-lines record"""
        return json.dumps(OutputUtils.clean(data), sort_keys=True, separators=(',', ':')) + '\n'

    @staticmethod
    def clean(data: Any) -> Any:
        """Replace NaN/inf with None so the output is strict JSON"""
        if isinstance(data, float):
            return None if math.isnan(data) or math.isinf(data) else data
        if isinstance(data, dict):
            return {k: OutputUtils.clean(v) for k, v in data.items()}
        if isinstance(data, (list, tuple)):
            return [OutputUtils.clean(v) for v in data]
        return data

    @staticmethod
    def write_text(path: str, text: str) -> None:
        """Write via a temporary file so a failed run never leaves a partial artifact"""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise

    @staticmethod
    def write_json(path: str, data: Any) -> None:
        OutputUtils.write_text(path, OutputUtils.dumps(data))

    @staticmethod
    def write_csv(path: str, df: pd.DataFrame) -> None:
        OutputUtils.write_text(path, df.to_csv(index=False, lineterminator='\n'))

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except FileNotFoundError:
            raise ResultsError(f"missing results file {path}")
        except json.JSONDecodeError as e:
            raise ResultsError(f"cannot parse {path}: {e}")

    @staticmethod
    def load_averaged(results_dir: str, population: str) -> ComparisonReport:
        """The permutation-averaged report of one population in a results directory"""
        index = OutputUtils.read_json(os.path.join(results_dir, 'populations.json'))
        for entry in index:
            if entry['population'] == population:
                data = OutputUtils.read_json(os.path.join(results_dir, entry['directory'], 'averaged.json'))
                return ComparisonReport.from_dict(data['report'])
        known = ', '.join(entry['population'] for entry in index) or 'none'
        raise ResultsError(f"population '{population}' not found in {results_dir} (available: {known})")

    @staticmethod
    def metric_rows(population: str, n: int, permutation: str, report: ComparisonReport,
                    feasible: bool) -> List[Dict[str, Any]]:
        """Flat metrics rows, one per method and role"""
        rows = []
        for summary in (report.srs, report.srsq):
            for role in ROLES:
                m = summary.metrics[role]
                row = {'population': population, 'N': n, 'permutation': permutation,
                       'method': summary.method, 'role': role}
                row.update({measure: getattr(m, measure) for measure in MEASURES})
                row.update({name: summary.counts[name] for name in COUNT_FIELDS})
                row['achieved_n'] = summary.achieved_n
                row['feasible'] = feasible
                rows.append(row)
        return rows

    @staticmethod
    def metrics_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
        return pd.DataFrame(list(rows), columns=list(METRICS_COLUMNS))


class FigureUtils:
    """Two-series plot data for the per-population figures"""

    # figure name -> (role, column in metrics.csv)
    FIGURES = {
        'aux_bias': ('auxiliary', 'bias_abs'),
        'achieved_n': ('auxiliary', 'achieved_n'),
        'aux_var': ('auxiliary', 'variance'),
        'strat_bias': ('stratifier', 'bias_abs'),
        'strat_var': ('stratifier', 'variance'),
        'unobs_bias': ('unobserved', 'bias_abs'),
        'unobs_var': ('unobserved', 'variance'),
    }

    @staticmethod
    def load_metrics(results_dir: str) -> pd.DataFrame:
        path = os.path.join(results_dir, 'metrics.csv')
        if not os.path.isfile(path):
            raise ResultsError(f"no metrics.csv in {results_dir}")
        df = pd.read_csv(path, dtype={'population': str, 'permutation': str})
        if df.empty:
            raise ResultsError(f"{path} has no rows")
        return df

    @staticmethod
    def plot_data(metrics: pd.DataFrame, figure: str) -> pd.DataFrame:
        """population, N, SRS, SRSQ for one figure, smallest population first"""
        if figure not in FigureUtils.FIGURES:
            raise ResultsError(f"unknown figure {figure!r}; choose from {', '.join(FigureUtils.FIGURES)}")
        role, column = FigureUtils.FIGURES[figure]
        selected = metrics[(metrics['permutation'] == AVERAGED_LABEL) & (metrics['role'] == role)]
        if selected.empty:
            raise ResultsError("metrics.csv has no permutation-averaged rows")
        wide = selected.pivot(index=['population', 'N'], columns='method', values=column).reset_index()
        for method in ('SRS', 'SRSQ'):
            if method not in wide.columns:
                raise ResultsError(f"metrics.csv has no {method} rows")
        wide = wide[['population', 'N', 'SRS', 'SRSQ']]
        wide.columns.name = None
        return wide.sort_values(['N', 'population'], kind='mergesort').reset_index(drop=True)


class TableUtils:
    """Markdown renderings of comparison and stability reports"""

    ROLE_LABELS = {
        'auxiliary': 'Auxiliary Variable (Quota)',
        'stratifier': 'Sampling Frame Variable (Strata)',
        'unobserved': 'Unobserved Variable (Neither)',
    }
    MEASURE_LABELS = {
        'bias_abs': 'External Validity Bias (Absolute Value)',
        'variance': 'Variance',
        'mse': 'Mean Squared Error (MSE)',
    }
    COUNT_LABELS = {
        'contacted': 'Contacted about participating',
        'excluded': 'Excluded due to quotas',
        'invited': 'Invited to participate',
        'declined': 'Declined to participate',
        'agreed': 'Agreed to participate',
    }

    @staticmethod
    def markdown_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
        """
        Build a markdown table, padding short rows.

        Examples:
            >>> print(TableUtils.markdown_table(['A', 'B'], [['1', '2'], ['3']]))
            | A | B |
            |---|---|
            | 1 | 2 |
            | 3 |  |
        """
        result = ["| " + " | ".join(headers) + " |"]
        result.append("|" + "|".join(["---" for _ in headers]) + "|")
        for row in rows:
            cells = list(row) + [""] * (len(headers) - len(row))
            result.append("| " + " | ".join(cells) + " |")
        return "\n".join(result)

    @staticmethod
    def fmt(value: float, digits: int = 4) -> str:
        if value is None or math.isnan(value):
            return "n/a"
        return f"{value:.{digits}f}"

    @staticmethod
    def comparison_table(report: ComparisonReport) -> str:
        """Measure x role rows with SRS, SRSQ and difference columns"""
        rows: List[List[str]] = []
        summaries = (report.srs, report.srsq, report.difference)
        for measure, label in TableUtils.MEASURE_LABELS.items():
            rows.append([f"**{label}**"])
            for role in ROLES:
                rows.append([TableUtils.ROLE_LABELS[role]] +
                            [TableUtils.fmt(getattr(s.metrics[role], measure)) for s in summaries])
        rows.append(["**Total Number of Schools**"])
        for name, label in TableUtils.COUNT_LABELS.items():
            rows.append([label] + [TableUtils.fmt(s.counts[name], 1) for s in summaries])
        rows.append(["Achieved sample size"] + [TableUtils.fmt(s.achieved_n, 2) for s in summaries])
        headers = ["Performance Measure and Variable Type", "SRS", "SRSQ", "Difference (SRSQ-SRS)"]
        return TableUtils.markdown_table(headers, rows)

    @staticmethod
    def stability_table(diff: DiffReport) -> str:
        rows: List[List[str]] = []
        for measure, label in TableUtils.MEASURE_LABELS.items():
            rows.append([f"**{label}**"])
            for role in ROLES:
                r = diff.row(f'{role}.{measure}')
                rows.append([TableUtils.ROLE_LABELS[role], TableUtils.fmt(r.first),
                             TableUtils.fmt(r.second), TableUtils.fmt(r.gap)])
        rows.append(["**Total Number of Schools**"])
        for name, label in TableUtils.COUNT_LABELS.items():
            r = diff.row(f'counts.{name}')
            rows.append([label, TableUtils.fmt(r.first, 1), TableUtils.fmt(r.second, 1), TableUtils.fmt(r.gap, 1)])
        headers = ["Performance Measure and Variable Type", diff.first_label, diff.second_label,
                   f"Difference ({diff.second_label} - {diff.first_label})"]
        return TableUtils.markdown_table(headers, rows)


def log_simulation_operation(operation: str, status: str, details: Optional[str] = None) -> None:
    log_message = f"Simulation operation: {operation} - Status: {status}"
    if details:
        log_message += f" - Details: {details}"
    logger.info(log_message)
