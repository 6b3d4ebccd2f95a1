"""Segment kernels used by graph attention: softmax over incoming edges and
scatter-add of edge rows into node rows.

The compiled extension ``graph2sfiles._kernels`` is used when it is importable;
otherwise the numpy implementations below are selected. Set the environment
variable ``G2S_PURE_PYTHON=1`` to force the numpy path.
"""
from __future__ import annotations

import os

import numpy as np


def _np_segment_softmax(scores: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    mx = np.full((n, scores.shape[1]), -np.inf)
    np.maximum.at(mx, seg, scores)
    ex = np.exp(scores - mx[seg])
    tot = np.zeros((n, scores.shape[1]))
    np.add.at(tot, seg, ex)
    return ex / tot[seg]


def _np_segment_softmax_backward(y, g, seg, n):
    dot = np.zeros((n, y.shape[1]))
    np.add.at(dot, seg, g * y)
    return y * (g - dot[seg])


def _np_scatter_add(values, index, n):
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, index, values)
    return out


NUMPY_KERNELS = {
    "segment_softmax": _np_segment_softmax,
    "segment_softmax_backward": _np_segment_softmax_backward,
    "scatter_add": _np_scatter_add,
}

_compiled = None
if not os.environ.get("G2S_PURE_PYTHON"):
    try:
        from graph2sfiles import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"

if _compiled is not None:
    COMPILED_KERNELS = {
        "segment_softmax": _compiled.segment_softmax,
        "segment_softmax_backward": _compiled.segment_softmax_backward,
        "scatter_add": _compiled.scatter_add,
    }
else:
    COMPILED_KERNELS = None

_active = COMPILED_KERNELS or NUMPY_KERNELS


def _as2d(a: np.ndarray) -> tuple[np.ndarray, tuple]:
    shape = a.shape
    return np.ascontiguousarray(a.reshape(shape[0], -1), dtype=np.float64), shape


def _idx(index: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(index, dtype=np.int64)


def segment_softmax(scores: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Softmax of ``scores`` (rows x heads) within each segment id of ``seg``."""
    s2, shape = _as2d(scores)
    return _active["segment_softmax"](s2, _idx(seg), n).reshape(shape)


def segment_softmax_backward(y: np.ndarray, g: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    y2, shape = _as2d(y)
    g2, _ = _as2d(g)
    return _active["segment_softmax_backward"](y2, g2, _idx(seg), n).reshape(shape)


def scatter_add(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` output rows selected by ``index``."""
    v2, shape = _as2d(values)
    out = _active["scatter_add"](v2, _idx(index), n)
    return out.reshape((n,) + shape[1:])
