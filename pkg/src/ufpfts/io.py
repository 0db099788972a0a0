"""Draw files, metadata sidecars and tidy CSV tables.

Draws are stored one row per stored iteration. Column names index arrays
from 0 except size bins, which keep their 1-based labels::

    theta, deviance, alpha[k], Delta[z][j][k], gamma[i][k], Upsilon[i][g][k],
    D[k1][k2], W[a][b], eta[l], w[s], sigma_sq[s]

Blocks that are not part of the model (``gamma``/``D`` without run
intercepts, ``Upsilon``/``W`` without random jumps) are omitted.
"""
import csv
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict
from itertools import product

import numpy as np

from .design import ModelSpec
from .mcmc import ChainDraws, SamplerSettings

SCHEMA_VERSION = 1


@contextmanager
def atomic_open(path, mode="w"):
    """Write to a temporary file and rename it over ``path`` on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="", encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, header, rows):
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path):
    """Return ``(header, rows)`` with numeric cells converted to float."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[_parse(v) for v in row] for row in r]
    return header, rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _parse(v):
    try:
        return float(v)
    except ValueError:
        return v


def _blocks(spec: ModelSpec, n_runs: int):
    K, J, G, L, S = spec.K, spec.J, spec.G, spec.L, spec.n_bins
    blocks = [("theta", ()), ("deviance", ()), ("alpha", (K,)), ("Delta", (2, J, K))]
    if spec.random_intercepts:
        blocks += [("gamma", (n_runs, K)), ("D", (K, K))]
    if G:
        blocks += [("Upsilon", (n_runs, G, K)), ("W", (G * K, G * K))]
    blocks += [("eta", (L,)), ("w", (S,)), ("sigma_sq", (S,))]
    return blocks


def _names(name, shape):
    if not shape:
        return [name]
    offs = [1 if name in ("w", "sigma_sq") else 0] * len(shape)
    return [name + "".join(f"[{i + o}]" for i, o in zip(idx, offs))
            for idx in product(*(range(n) for n in shape))]


def draw_columns(spec: ModelSpec, n_runs: int):
    return [c for name, shape in _blocks(spec, n_runs) for c in _names(name, shape)]


def write_draws(path, draws: ChainDraws, spec: ModelSpec):
    n_runs = draws.gamma.shape[1]
    blocks = _blocks(spec, n_runs)
    header = [c for name, shape in blocks for c in _names(name, shape)]
    mats = [getattr(draws, name).reshape(draws.n_draws, -1) for name, _ in blocks]
    table = np.hstack(mats) if mats else np.empty((0, 0))
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])


def read_draws(path, spec: ModelSpec, n_runs: int, settings=None, spec_hash="") -> ChainDraws:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    expected = draw_columns(spec, n_runs)
    if header != expected:
        raise ValueError(f"{path}: draw columns do not match the model definition")
    n = data.shape[0]
    data = data.reshape(n, len(header))
    K, J, G = spec.K, spec.J, spec.G
    full = {"gamma": np.zeros((n, n_runs, K)), "D": np.zeros((n, K, K)),
            "Upsilon": np.zeros((n, n_runs, G, K)), "W": np.zeros((n, G * K, G * K))}
    col = 0
    for name, shape in _blocks(spec, n_runs):
        size = int(np.prod(shape)) if shape else 1
        full[name] = data[:, col:col + size].reshape((n,) + shape)
        col += size
    return ChainDraws(**full, settings=settings, spec_hash=spec_hash)


def write_metadata(path, spec: ModelSpec, settings: SamplerSettings, extra=None):
    meta = {
        "schema_version": SCHEMA_VERSION,
        "spec_hash": spec.hash(),
        "spec": spec.to_dict(),
        "settings": asdict(settings),
    }
    if extra:
        meta.update(extra)
    with atomic_open(path) as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_metadata(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_fit(meta_path):
    """Load ``(spec, draws, meta)`` from a metadata sidecar and its draws file."""
    meta = read_metadata(meta_path)
    spec = ModelSpec.from_dict(meta["spec"])
    if spec.hash() != meta["spec_hash"]:
        raise ValueError(f"{meta_path}: stored model definition does not match its hash")
    settings = SamplerSettings(**meta["settings"])
    draws_path = os.path.join(os.path.dirname(os.fspath(meta_path)), meta["draws_file"])
    draws = read_draws(draws_path, spec, meta["n_runs"], settings, meta["spec_hash"])
    return spec, draws, meta
