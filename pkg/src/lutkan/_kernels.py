"""Hot-path kernel for table-driven inference.

The forward kernel is written once and JIT-compiled with numba when
available; without numba the very same function body runs as plain Python
(slow, but with identical arithmetic since everything is scalar float64).

Two kernels cover the two latency regimes. Large batches run feature-major
per layer: for each input feature the segment lookup, interpolation
weights and base-branch value are computed once per sample, then every
outgoing edge streams over the batch with its table and quantization
constants held hot. Tiny batches run sample-major to skip the batch
scratch buffers. Both accumulate over input features in the same order
with the same scalar expressions, so their results are bit-identical and
independent of the iteration strategy.
"""

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def decorate(func):
            return func

        return decorate


@njit(cache=True)
def forward_kernel(
    x,            # (N, d) float64, C-contiguous
    n_layers,
    n_in,         # (n_layers,) int64
    n_out,        # (n_layers,) int64
    g_arr,        # (n_layers,) int64
    lut_size,
    bounds,       # flat float64 segment boundaries
    bounds_off,   # (n_layers,) int64
    values,       # flat int8 (sym) or uint8 (asym) table entries
    val_off,      # (n_layers,) int64
    scales,       # flat float64 view of the binary32 scales, one per segment
    vmins,        # flat float64 view of the binary32 offsets (zeros for sym)
    seg_off,      # (n_layers,) int64
    alpha,        # flat float64 view of the binary32 base scales, one per edge
    beta,         # flat float64 view of the binary32 spline scales
    edge_off,     # (n_layers,) int64
    asym,
    closed,
    clip_oob,
    full_phi,
    max_width,
    out,          # (N,) float64
    counters,     # (3,) int64: total_inputs, oob_events, clipped_events
):
    n = x.shape[0]
    act = np.empty((max_width, n), dtype=np.float64)
    nxt = np.empty((max_width, n), dtype=np.float64)
    basep = np.empty(n, dtype=np.float64)
    lam = np.empty(n, dtype=np.float64)
    lam1 = np.empty(n, dtype=np.float64)
    segs = np.empty(n, dtype=np.int64)
    voff = np.empty(n, dtype=np.int64)
    zerosp = np.empty(n, dtype=np.uint8)
    for i in range(n_in[0]):
        for r in range(n):
            act[i, r] = x[r, i]
    for l in range(n_layers):
        ni = n_in[l]
        no = n_out[l]
        g = g_arr[l]
        boff = bounds_off[l]
        b_lo = bounds[boff]
        b_hi = bounds[boff + g]
        width = (b_hi - b_lo) / g
        seg_stride = g * lut_size
        for j in range(no):
            for r in range(n):
                nxt[j, r] = 0.0
        for i in range(ni):
            # per-sample pass: segment lookup, interpolation weights, base branch
            any_zero = False
            for r in range(n):
                xi = act[i, r]
                oob = False
                seg = 0
                if xi < b_lo or xi > b_hi:
                    oob = True
                elif xi == b_hi:
                    if closed:
                        seg = g - 1
                    else:
                        oob = True
                else:
                    seg = int((xi - b_lo) / width)
                    if seg > g - 1:
                        seg = g - 1
                    if seg < 0:
                        seg = 0
                    # corrections keep the index exact w.r.t. the stored
                    # boundaries even when the division rounds badly
                    while seg > 0 and xi < bounds[boff + seg]:
                        seg -= 1
                    while seg < g - 1 and xi >= bounds[boff + seg + 1]:
                        seg += 1
                if oob and l == 0:
                    counters[1] += 1
                if xi >= 0.0:
                    basep[r] = xi / (1.0 + math.exp(-xi))
                else:
                    ex = math.exp(xi)
                    basep[r] = xi * ex / (1.0 + ex)
                if oob and not clip_oob:
                    # zero_spline: only the analytic base branch survives
                    zerosp[r] = 1
                    any_zero = True
                    segs[r] = 0
                    voff[r] = 0
                    lam[r] = 0.0
                    lam1[r] = 1.0
                    continue
                zerosp[r] = 0
                xe = xi
                if oob:
                    counters[2] += 1
                    if xi < b_lo:
                        xe = b_lo
                        seg = 0
                    else:
                        xe = b_hi
                        seg = g - 1
                a = bounds[boff + seg]
                b = bounds[boff + seg + 1]
                delta = (b - a) / (lut_size - 1)
                u = (xe - a) / delta
                if u < 0.0:
                    u = 0.0
                q = int(u)
                if q > lut_size - 2:
                    q = lut_size - 2
                lr = u - q
                if lr < 0.0:
                    lr = 0.0
                if lr > 1.0:
                    lr = 1.0
                segs[r] = seg
                voff[r] = seg * lut_size + q
                lam[r] = lr
                lam1[r] = 1.0 - lr
            # per-edge pass: stream the batch with this edge's tables hot
            row = i * no
            e = edge_off[l] + row
            sb = seg_off[l] + row * g
            vb = val_off[l] + row * seg_stride
            if any_zero:
                for j in range(no):
                    ab = alpha[e]
                    bb = beta[e]
                    for r in range(n):
                        if zerosp[r] == 1:
                            nxt[j, r] += ab * basep[r]
                        else:
                            s = scales[sb + segs[r]]
                            vo = vb + voff[r]
                            if asym:
                                vm = vmins[sb + segs[r]]
                                v0 = vm + s * np.float64(values[vo])
                                v1 = vm + s * np.float64(values[vo + 1])
                            else:
                                v0 = s * np.float64(values[vo])
                                v1 = s * np.float64(values[vo + 1])
                            interp = lam1[r] * v0 + lam[r] * v1
                            if full_phi:
                                nxt[j, r] += interp
                            else:
                                nxt[j, r] += ab * basep[r] + bb * interp
                    e += 1
                    sb += g
                    vb += seg_stride
            elif full_phi:
                if asym:
                    for j in range(no):
                        for r in range(n):
                            sx = sb + segs[r]
                            s = scales[sx]
                            vm = vmins[sx]
                            vo = vb + voff[r]
                            v0 = vm + s * np.float64(values[vo])
                            v1 = vm + s * np.float64(values[vo + 1])
                            nxt[j, r] += lam1[r] * v0 + lam[r] * v1
                        e += 1
                        sb += g
                        vb += seg_stride
                else:
                    for j in range(no):
                        for r in range(n):
                            s = scales[sb + segs[r]]
                            vo = vb + voff[r]
                            v0 = s * np.float64(values[vo])
                            v1 = s * np.float64(values[vo + 1])
                            nxt[j, r] += lam1[r] * v0 + lam[r] * v1
                        e += 1
                        sb += g
                        vb += seg_stride
            elif asym:
                for j in range(no):
                    ab = alpha[e]
                    bb = beta[e]
                    for r in range(n):
                        sx = sb + segs[r]
                        s = scales[sx]
                        vm = vmins[sx]
                        vo = vb + voff[r]
                        v0 = vm + s * np.float64(values[vo])
                        v1 = vm + s * np.float64(values[vo + 1])
                        nxt[j, r] += ab * basep[r] + bb * (lam1[r] * v0 + lam[r] * v1)
                    e += 1
                    sb += g
                    vb += seg_stride
            else:
                for j in range(no):
                    ab = alpha[e]
                    bb = beta[e]
                    for r in range(n):
                        s = scales[sb + segs[r]]
                        vo = vb + voff[r]
                        v0 = s * np.float64(values[vo])
                        v1 = s * np.float64(values[vo + 1])
                        nxt[j, r] += ab * basep[r] + bb * (lam1[r] * v0 + lam[r] * v1)
                    e += 1
                    sb += g
                    vb += seg_stride
        tmp = act
        act = nxt
        nxt = tmp
    for r in range(n):
        h = act[0, r]
        if h >= 0.0:
            out[r] = 1.0 / (1.0 + math.exp(-h))
        else:
            eh = math.exp(h)
            out[r] = eh / (1.0 + eh)
    counters[0] += n


@njit(cache=True)
def forward_kernel_single(
    x,            # (N, d) float64, C-contiguous; meant for tiny N
    n_layers,
    n_in,
    n_out,
    g_arr,
    lut_size,
    bounds,
    bounds_off,
    values,
    val_off,
    scales,
    vmins,
    seg_off,
    alpha,
    beta,
    edge_off,
    asym,
    closed,
    clip_oob,
    full_phi,
    max_width,
    out,
    counters,
):
    n_samples = x.shape[0]
    act = np.empty(max_width, dtype=np.float64)
    nxt = np.empty(max_width, dtype=np.float64)
    for r in range(n_samples):
        for i in range(n_in[0]):
            act[i] = x[r, i]
        for l in range(n_layers):
            ni = n_in[l]
            no = n_out[l]
            g = g_arr[l]
            boff = bounds_off[l]
            b_lo = bounds[boff]
            b_hi = bounds[boff + g]
            width = (b_hi - b_lo) / g
            seg_stride = g * lut_size
            for j in range(no):
                nxt[j] = 0.0
            for i in range(ni):
                xi = act[i]
                oob = False
                seg = 0
                if xi < b_lo or xi > b_hi:
                    oob = True
                elif xi == b_hi:
                    if closed:
                        seg = g - 1
                    else:
                        oob = True
                else:
                    seg = int((xi - b_lo) / width)
                    if seg > g - 1:
                        seg = g - 1
                    if seg < 0:
                        seg = 0
                    while seg > 0 and xi < bounds[boff + seg]:
                        seg -= 1
                    while seg < g - 1 and xi >= bounds[boff + seg + 1]:
                        seg += 1
                if oob and l == 0:
                    counters[1] += 1
                if xi >= 0.0:
                    base = xi / (1.0 + math.exp(-xi))
                else:
                    ex = math.exp(xi)
                    base = xi * ex / (1.0 + ex)
                row = i * no
                e = edge_off[l] + row
                if oob and not clip_oob:
                    for j in range(no):
                        nxt[j] += alpha[e] * base
                        e += 1
                    continue
                xe = xi
                if oob:
                    counters[2] += 1
                    if xi < b_lo:
                        xe = b_lo
                        seg = 0
                    else:
                        xe = b_hi
                        seg = g - 1
                a = bounds[boff + seg]
                b = bounds[boff + seg + 1]
                delta = (b - a) / (lut_size - 1)
                u = (xe - a) / delta
                if u < 0.0:
                    u = 0.0
                q = int(u)
                if q > lut_size - 2:
                    q = lut_size - 2
                lam = u - q
                if lam < 0.0:
                    lam = 0.0
                if lam > 1.0:
                    lam = 1.0
                lam1 = 1.0 - lam
                sidx = seg_off[l] + row * g + seg
                vidx = val_off[l] + (row * g + seg) * lut_size + q
                if asym:
                    for j in range(no):
                        s = scales[sidx]
                        vm = vmins[sidx]
                        v0 = vm + s * np.float64(values[vidx])
                        v1 = vm + s * np.float64(values[vidx + 1])
                        interp = lam1 * v0 + lam * v1
                        if full_phi:
                            nxt[j] += interp
                        else:
                            nxt[j] += alpha[e] * base + beta[e] * interp
                        e += 1
                        sidx += g
                        vidx += seg_stride
                else:
                    for j in range(no):
                        s = scales[sidx]
                        v0 = s * np.float64(values[vidx])
                        v1 = s * np.float64(values[vidx + 1])
                        interp = lam1 * v0 + lam * v1
                        if full_phi:
                            nxt[j] += interp
                        else:
                            nxt[j] += alpha[e] * base + beta[e] * interp
                        e += 1
                        sidx += g
                        vidx += seg_stride
            tmp = act
            act = nxt
            nxt = tmp
        h = act[0]
        if h >= 0.0:
            out[r] = 1.0 / (1.0 + math.exp(-h))
        else:
            eh = math.exp(h)
            out[r] = eh / (1.0 + eh)
    counters[0] += n_samples
