# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward kernels: one decoder-block step and the LM-head probe.

Loop orders are fixed, so results are bit-identical across runs and
thread counts. The numpy backend (pykern) implements the same math with
vectorized ops; the two agree to ~1e-12 but not bit-for-bit.
"""

from libc.math cimport exp, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

LN_EPS = 1e-5

cdef double _LN_EPS = 1e-5


cdef void _layernorm_rows(const double[:, ::1] x, const double[::1] gain,
                          const double[::1] bias, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t s = x.shape[0], h = x.shape[1], i, j
    cdef double m, v, d, inv
    for i in range(s):
        m = 0.0
        for j in range(h):
            m += x[i, j]
        m /= h
        v = 0.0
        for j in range(h):
            d = x[i, j] - m
            v += d * d
        v /= h
        inv = 1.0 / sqrt(v + _LN_EPS)
        for j in range(h):
            out[i, j] = (x[i, j] - m) * inv * gain[j] + bias[j]


cdef void _matmul(const double[:, ::1] a, const double[:, ::1] b,
                  double[:, ::1] out) noexcept nogil:
    # out = a @ b with a deterministic i-k-j accumulation order
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1], i, kk, j
    cdef double aik
    for i in range(m):
        for j in range(n):
            out[i, j] = 0.0
        for kk in range(k):
            aik = a[i, kk]
            for j in range(n):
                out[i, j] += aik * b[kk, j]


cdef void _causal_attention(const double[:, ::1] q, const double[:, ::1] k,
                            const double[:, ::1] v, double[:, ::1] ctx,
                            int num_heads, double[::1] srow) noexcept nogil:
    cdef Py_ssize_t s = q.shape[0], h = q.shape[1]
    cdef Py_ssize_t hd = h // num_heads
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef Py_ssize_t hh, base, i, j, t
    cdef double acc, mx, z, p
    for i in range(s):
        for j in range(h):
            ctx[i, j] = 0.0
    for hh in range(num_heads):
        base = hh * hd
        for i in range(s):
            for j in range(i + 1):
                acc = 0.0
                for t in range(hd):
                    acc += q[i, base + t] * k[j, base + t]
                srow[j] = acc * scale
            mx = srow[0]
            for j in range(1, i + 1):
                if srow[j] > mx:
                    mx = srow[j]
            z = 0.0
            for j in range(i + 1):
                srow[j] = exp(srow[j] - mx)
                z += srow[j]
            for j in range(i + 1):
                p = srow[j] / z
                for t in range(hd):
                    ctx[i, base + t] += p * v[j, base + t]


def layer_forward(double[:, ::1] x,
                  const double[:, ::1] wq, const double[:, ::1] wk,
                  const double[:, ::1] wv, const double[:, ::1] wo,
                  const double[:, ::1] w1, const double[:, ::1] w2,
                  const double[::1] ln1_gain, const double[::1] ln1_bias,
                  const double[::1] ln2_gain, const double[::1] ln2_bias,
                  int num_heads):
    """Advance the residual stream ``x`` (shape (s, h), updated in place)
    through one pre-norm decoder block.

    Returns (attn_last, mlp_last): the two sublayer output vectors for the
    final sequence position, before their residual adds.
    """
    cdef Py_ssize_t s = x.shape[0], h = x.shape[1]
    cdef Py_ssize_t ff = w1.shape[1]
    cdef cnp.ndarray norm_buf = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray q = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray k = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray v = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray ctx = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray attn_out = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray hbuf = np.empty((s, ff), dtype=np.float64)
    cdef cnp.ndarray mlp_out = np.empty((s, h), dtype=np.float64)
    cdef cnp.ndarray srow = np.empty(s, dtype=np.float64)

    cdef double[:, ::1] norm_v = norm_buf
    cdef double[:, ::1] q_v = q
    cdef double[:, ::1] k_v = k
    cdef double[:, ::1] v_v = v
    cdef double[:, ::1] ctx_v = ctx
    cdef double[:, ::1] attn_v = attn_out
    cdef double[:, ::1] hbuf_v = hbuf
    cdef double[:, ::1] mlp_v = mlp_out
    cdef double[::1] srow_v = srow
    cdef Py_ssize_t i, j

    with nogil:
        _layernorm_rows(x, ln1_gain, ln1_bias, norm_v)
        _matmul(norm_v, wq, q_v)
        _matmul(norm_v, wk, k_v)
        _matmul(norm_v, wv, v_v)
        _causal_attention(q_v, k_v, v_v, ctx_v, num_heads, srow_v)
        _matmul(ctx_v, wo, attn_v)
        for i in range(s):
            for j in range(h):
                x[i, j] += attn_v[i, j]
        _layernorm_rows(x, ln2_gain, ln2_bias, norm_v)
        _matmul(norm_v, w1, hbuf_v)
        for i in range(s):
            for j in range(ff):
                if hbuf_v[i, j] < 0.0:
                    hbuf_v[i, j] = 0.0
        _matmul(hbuf_v, w2, mlp_v)
        for i in range(s):
            for j in range(h):
                x[i, j] += mlp_v[i, j]

    return attn_out[s - 1].copy(), mlp_out[s - 1].copy()


def confidence_probe(const double[::1] hidden,
                     const double[::1] lnf_gain, const double[::1] lnf_bias,
                     const double[:, ::1] head_w, const double[::1] head_b,
                     bint apply_norm):
    """Fused probe for the adaptive loop: LM-head logits, stabilized softmax,
    and the top-2 bookkeeping in one pass.

    Returns (argmax id, top probability, second probability, logits); argmax
    ties resolve to the lowest token id.
    """
    cdef Py_ssize_t h = hidden.shape[0], vocab = head_w.shape[0]
    cdef cnp.ndarray logits = np.empty(vocab, dtype=np.float64)
    cdef double[::1] lg = logits
    cdef cnp.ndarray hn = np.empty(h, dtype=np.float64)
    cdef double[::1] hn_v = hn
    cdef Py_ssize_t i, j, am
    cdef double m, var, d, inv, acc, mx, second, z

    with nogil:
        if apply_norm:
            m = 0.0
            for j in range(h):
                m += hidden[j]
            m /= h
            var = 0.0
            for j in range(h):
                d = hidden[j] - m
                var += d * d
            var /= h
            inv = 1.0 / sqrt(var + _LN_EPS)
            for j in range(h):
                hn_v[j] = (hidden[j] - m) * inv * lnf_gain[j] + lnf_bias[j]
        else:
            for j in range(h):
                hn_v[j] = hidden[j]
        for i in range(vocab):
            acc = 0.0
            for j in range(h):
                acc += head_w[i, j] * hn_v[j]
            lg[i] = acc + head_b[i]
        am = 0
        mx = lg[0]
        for i in range(1, vocab):
            if lg[i] > mx:
                mx = lg[i]
                am = i
        z = 0.0
        second = -1.0
        for i in range(vocab):
            acc = exp(lg[i] - mx)
            z += acc
            if i != am and acc > second:
                second = acc
    return am, 1.0 / z, second / z, logits


def cos_sim(const double[::1] u, const double[::1] v):
    """Cosine similarity clamped to [-1, 1]; two zero vectors give 1.0 and
    a single zero vector gives 0.0 (same conventions as features.cosine)."""
    cdef Py_ssize_t n = u.shape[0], i
    cdef double dot = 0.0, nu = 0.0, nv = 0.0, c
    with nogil:
        for i in range(n):
            dot += u[i] * v[i]
            nu += u[i] * u[i]
            nv += v[i] * v[i]
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = dot / sqrt(nu * nv)
    if c > 1.0:
        return 1.0
    if c < -1.0:
        return -1.0
    return c


def probe_logits(const double[::1] hidden,
                 const double[::1] lnf_gain, const double[::1] lnf_bias,
                 const double[:, ::1] head_w, const double[::1] head_b,
                 bint apply_norm):
    """LM-head logits for a single hidden vector: head_w @ norm(hidden) + head_b.

    ``apply_norm`` toggles the final layer normalization before the affine map.
    """
    cdef Py_ssize_t h = hidden.shape[0], vocab = head_w.shape[0]
    cdef cnp.ndarray out = np.empty(vocab, dtype=np.float64)
    cdef cnp.ndarray hn = np.empty(h, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef double[::1] hn_v = hn
    cdef Py_ssize_t i, j
    cdef double m, var, d, inv, acc

    with nogil:
        if apply_norm:
            m = 0.0
            for j in range(h):
                m += hidden[j]
            m /= h
            var = 0.0
            for j in range(h):
                d = hidden[j] - m
                var += d * d
            var /= h
            inv = 1.0 / sqrt(var + _LN_EPS)
            for j in range(h):
                hn_v[j] = (hidden[j] - m) * inv * lnf_gain[j] + lnf_bias[j]
        else:
            for j in range(h):
                hn_v[j] = hidden[j]
        for i in range(vocab):
            acc = 0.0
            for j in range(h):
                acc += head_w[i, j] * hn_v[j]
            out_v[i] = acc + head_b[i]

    return out
