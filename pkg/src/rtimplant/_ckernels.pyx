# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for the convolution op."""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """Unfold (N, C, H, W) into rows of shape (N*Ho*Wo, C*kh*kw)."""
    cdef Py_ssize_t n_img = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_img * Ho * Wo, C * kh * kw), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t n, oy, ox, c, i, j, iy, ix, row, col
    with nogil:
        for n in range(n_img):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (n * Ho + oy) * Wo + ox
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if 0 <= iy < H and 0 <= ix < W:
                                    out[row, col] = x[n, c, iy, ix]
                                col += 1
    return out_arr


def col2im(real[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int kh, int kw, int stride, int pad):
    """Adjoint of im2col: scatter-add rows back into an (N, C, H, W) array."""
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_img, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, oy, ox, c, i, j, iy, ix, row, col
    with nogil:
        for n in range(n_img):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (n * Ho + oy) * Wo + ox
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if 0 <= iy < H and 0 <= ix < W:
                                    out[n, c, iy, ix] += cols[row, col]
                                col += 1
    return out_arr
