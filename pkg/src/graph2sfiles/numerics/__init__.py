"""Differentiable float64 tensor core used by the encoder and decoder."""
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .linalg import fix_signs, sign_is_well_defined, sym_eig
from .tensor import (
    LAYER_NORM_EPS,
    LEAKY_SLOPE,
    GradTape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    dropout,
    exp,
    index,
    layer_norm,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scatter_add,
    segment_softmax,
    sigmoid,
    softmax,
    sub,
    sum,
    take_last,
    take_rows,
    transpose,
)


def elementwise(x, fn: str, *, p: float = 0.0, train: bool = False, rng=None):
    """Apply one of ``relu``, ``leaky_relu``, ``sigmoid`` or ``dropout`` per element."""
    if fn == "relu":
        return relu(x)
    if fn == "leaky_relu":
        return leaky_relu(x)
    if fn == "sigmoid":
        return sigmoid(x)
    if fn == "dropout":
        return dropout(x, p, train, rng)
    raise ValueError(f"unknown elementwise function {fn!r}")
