"""Pure-numpy dilated causal convolution kernels (fallback backend).

The convolution is lowered to batched GEMMs via an im2col view so BLAS does
the heavy lifting.  Shapes follow the rest of the kernel: input [B, Cin, T],
weight [Cout, Cin, k], output [B, Cout, T].  Inputs arrive already
left-padded by (k - 1) * dilation, so T_padded = T + (k - 1) * dilation.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _dilated_view(xp, k, dilation, t_out):
    """Strided view [B, Cin, k, T_out] of the padded input; no copy."""
    b, cin, _ = xp.shape
    sb, sc, st = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, cin, k, t_out),
        strides=(sb, sc, st * dilation, st),
        writeable=False,
    )


def conv1d_forward(xp, weight, bias, dilation, t_out):
    """Return output [B, Cout, T_out] for left-padded input xp."""
    b = xp.shape[0]
    cout, cin, k = weight.shape
    cols = np.ascontiguousarray(_dilated_view(xp, k, dilation, t_out)).reshape(
        b, cin * k, t_out
    )
    out = np.matmul(weight.reshape(cout, cin * k), cols)
    out += bias[:, None]
    return out


def conv1d_backward_weight(xp, grad_out, dilation, k):
    """Return (dweight [Cout, Cin, k], dbias [Cout])."""
    b, cin, _ = xp.shape
    t_out = grad_out.shape[2]
    cols = np.ascontiguousarray(_dilated_view(xp, k, dilation, t_out)).reshape(
        b, cin * k, t_out
    )
    dw = np.matmul(grad_out, cols.transpose(0, 2, 1)).sum(axis=0)
    db = grad_out.sum(axis=(0, 2))
    return dw.reshape(grad_out.shape[1], cin, k), db


def conv1d_backward_input(weight, grad_out, dilation, t_padded):
    """Return gradient w.r.t. the left-padded input, [B, Cin, T_padded]."""
    b, _, t_out = grad_out.shape
    cout, cin, k = weight.shape
    dxp = np.zeros((b, cin, t_padded), dtype=grad_out.dtype)
    for j in range(k):
        # dxp[:, :, j*d : j*d + T] accumulates W[:, :, j]^T @ grad_out
        np.add(
            dxp[:, :, j * dilation : j * dilation + t_out],
            np.matmul(weight[:, :, j].T, grad_out),
            out=dxp[:, :, j * dilation : j * dilation + t_out],
        )
    return dxp
