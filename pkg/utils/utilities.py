"""
Description:
    Utility functions used in the project.

To-do:
"""
# standard imports
from collections import OrderedDict
import json
import os

# third party imports
import numpy as np

ARRAY_FILE_MAGIC = b'MOCAPARR'
ARRAY_FILE_VERSION = 1


def dir_exists(directory):
    """
    Check if directory exists.

    Inputs:
        directory: (str) Directory to check.

    Returns:
        (bool) True if directory exists, False otherwise.
    """
    return os.path.isdir(directory)


def file_exists(filepath):
    """
    Check if file exists.

    Inputs:
        filepath: (str) File to check.

    Returns:
        (bool) True if file exists, False otherwise.
    """
    return os.path.isfile(filepath)


def make_parent_dir(filepath):
    """
    Create the directory a file is going to be written to.

    Inputs:
        filepath: (str) File about to be written.
    """
    directory = os.path.dirname(os.path.abspath(filepath))

    if not dir_exists(directory):
        os.makedirs(directory)


def sibling_path(filepath, suffix):
    """
    Path next to 'filepath' that swaps its extension for 'suffix'.
    ex) sibling_path('out/walk.jsonl', '.bin') == 'out/walk.bin'

    Inputs:
        filepath: (str) Reference file.
        suffix: (str) New ending, extension included.

    Returns:
        (str) New path.
    """
    root, _ = os.path.splitext(filepath)

    return root + suffix


def save_arrays(filepath, kind, arrays, meta=None):
    """
    Save named arrays to a self-describing binary file.

    Layout:
        line 1: b'MOCAPARR <version>'
        line 2: JSON header (kind, meta, name/dtype/shape/offset per array)
        rest:   raw little-endian array data at the listed offsets

    Keys are written sorted so identical inputs give identical bytes.

    Inputs:
        filepath: (str) File to write.
        kind: (str) What the file holds, checked on load.
        arrays: (list or OrderedDict) (name, array) pairs in storage order.
        meta: (dict, optional) JSON-serializable metadata.
    """
    items = list(arrays.items()) if isinstance(arrays, dict) else list(arrays)
    entries = []
    blobs = []
    offset = 0

    for name, array in items:
        array = np.asarray(array)
        dtype = '<i8' if np.issubdtype(array.dtype, np.integer) or array.dtype == bool else '<f8'
        blob = np.ascontiguousarray(array, dtype=dtype).tobytes()

        entries.append({
            'name': name,
            'dtype': dtype,
            'shape': list(array.shape),
            'offset': offset})
        blobs.append(blob)
        offset += len(blob)

    header = {
        'kind': kind,
        'version': ARRAY_FILE_VERSION,
        'meta': meta or {},
        'arrays': entries}

    make_parent_dir(filepath)
    with open(filepath, 'wb') as fid:
        fid.write(ARRAY_FILE_MAGIC + b' ' + str(ARRAY_FILE_VERSION).encode() + b'\n')
        fid.write(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
        for blob in blobs:
            fid.write(blob)


def load_arrays(filepath, kind=None):
    """
    Load a file written by save_arrays().

    Inputs:
        filepath: (str) File to read.
        kind: (str, optional) Expected kind. Checked if given.

    Returns:
        arrays: (OrderedDict) Name to array, in storage order.
        meta: (dict) Stored metadata.
    """
    with open(filepath, 'rb') as fid:
        magic = fid.readline().split()
        header_line = fid.readline()
        data = fid.read()

    if len(magic) != 2 or magic[0] != ARRAY_FILE_MAGIC:
        raise ValueError('Not an array file: {}'.format(filepath))
    if int(magic[1]) != ARRAY_FILE_VERSION:
        raise ValueError('Unsupported array file version {} in {}'.format(
            int(magic[1]), filepath))

    header = json.loads(header_line.decode('utf-8'))

    if kind is not None and header['kind'] != kind:
        raise ValueError('Expected a \'{}\' file, got \'{}\': {}'.format(
            kind, header['kind'], filepath))

    arrays = OrderedDict()
    for entry in header['arrays']:
        count = int(np.prod(entry['shape'])) if entry['shape'] else 1
        array = np.frombuffer(
            data, dtype=entry['dtype'], count=count, offset=entry['offset'])
        arrays[entry['name']] = array.reshape(entry['shape']).copy()

    return arrays, header['meta']
