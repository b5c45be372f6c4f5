"""
Plain text tables: whitespace separated columns, 12 significant digits,
Unix newlines. Identical rows always produce identical bytes.

Numeric tables go through numpy.savetxt; write_table is kept for rows
that mix names and numbers.
"""
import os

import numpy as np

FLOAT_FORMAT = '%.12g'


def _make_parent(path):
    directory = os.path.dirname(str(path))
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_array(path, header, rows):
    """
    :param path: output file, parent directories are created
    :param header: column names, written as a '#' comment line
    :param rows: array or iterable of numeric rows, one entry per column
    :return: path
    """
    _make_parent(path)
    data = np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=float)
    data = data.reshape(-1, len(header))
    np.savetxt(path, data, fmt=FLOAT_FORMAT, delimiter=' ', newline='\n', header=' '.join(header),
               comments='# ')
    return path


def format_value(value):
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return '1' if value else '0'
    if isinstance(value, int):
        return str(value)
    return FLOAT_FORMAT % float(value)


def format_table(header, rows):
    lines = []
    if header:
        lines.append('# ' + ' '.join(header))
    for row in rows:
        lines.append(' '.join(format_value(item) for item in row))
    return '\n'.join(lines) + '\n'


def write_table(path, header, rows):
    """
    Mixed string and number rows, e.g. key/value reports.

    :param path: output file, parent directories are created
    :param header: column names, written as a '#' comment line
    :param rows: iterable of sequences
    :return: path
    """
    _make_parent(path)
    with open(path, 'w', newline='\n') as fh:
        fh.write(format_table(header, rows))
    return path
