"""Hot loops, each with a numba kernel and a pure-numpy twin.

The public names at the bottom of the module dispatch on
`hpmg._accel.USE_NUMBA`; ``benchmarks/bench_kernels.py`` times both.

Structured CSR layout
---------------------
On a tensor lattice the couplings of node ``i`` along one axis form a
contiguous index range ``[lo[i], lo[i] + w[i])``, so a row's column set is
the tensor product of three ranges and is already sorted. The position of
entry (row, col) inside ``data`` is therefore computable without searching,
which lets assembly scatter straight into CSR storage.
"""
import numpy as np

from ._accel import njit, select

# ----------------------------------------------------------------------------
# lattice couplings and CSR pattern
# ----------------------------------------------------------------------------


def coupling_ranges(nelem, order):
    """Per-node coupling range ``lo`` and width ``w`` along one axis."""
    n1 = nelem * order + 1
    i = np.arange(n1)
    if order == 0:
        return np.zeros(1, dtype=np.int64), np.ones(1, dtype=np.int64)
    e_min = np.maximum(0, -(-i // order) - 1)
    e_max = np.minimum(nelem - 1, i // order)
    lo = e_min * order
    hi = (e_max + 1) * order
    return lo.astype(np.int64), (hi - lo + 1).astype(np.int64)


class LatticeLayout:
    """CSR bookkeeping for a grid of ``shape`` (x first) elements of ``order``.

    2D grids are padded to 3D with a single z layer so every kernel is
    written once.
    """

    def __init__(self, shape, order):
        shape = tuple(int(s) for s in shape)
        self.dim = len(shape)
        pad = shape + (1,) * (3 - self.dim)
        orders = [order] * self.dim + [0] * (3 - self.dim)
        self.nelem3 = np.array(pad, dtype=np.int64)
        self.order3 = np.array(orders, dtype=np.int64)
        self.n13 = self.nelem3 * self.order3 + 1
        ranges = [coupling_ranges(pad[k], orders[k]) for k in range(3)]
        self.lo = [r[0] for r in ranges]
        self.w = [r[1] for r in ranges]
        self.n_rows = int(np.prod(self.n13))
        wx, wy, wz = self.w
        row_nnz = (wz[:, None, None] * wy[None, :, None] * wx[None, None, :]).ravel()
        self.indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        np.cumsum(row_nnz, out=self.indptr[1:])
        self.nnz = int(self.indptr[-1])

    def indices(self):
        return build_indices(
            self.indptr, self.n13, self.lo[0], self.w[0], self.lo[1], self.w[1],
            self.lo[2], self.w[2],
        )

    def diagonal_positions(self):
        """Position in ``data`` of every diagonal entry."""
        nx, ny, nz = self.n13
        r = np.arange(self.n_rows)
        ix, iy, iz = r % nx, (r // nx) % ny, r // (nx * ny)
        lx, ly, lz = self.lo
        wx, wy, _ = self.w
        return self.indptr[r] + ((iz - lz[iz]) * wy[iy] + (iy - ly[iy])) * wx[ix] + (ix - lx[ix])

    def kernel_args(self):
        return (
            self.indptr, self.nelem3, self.order3, self.n13,
            self.lo[0], self.w[0], self.lo[1], self.w[1], self.lo[2], self.w[2],
        )


@njit
def _build_indices_numba(indptr, n13, lox, wx, loy, wy, loz, wz):
    nx, ny, nz = n13[0], n13[1], n13[2]
    out = np.empty(indptr[-1], dtype=np.int32)
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                r = (iz * ny + iy) * nx + ix
                k = indptr[r]
                for jz in range(loz[iz], loz[iz] + wz[iz]):
                    for jy in range(loy[iy], loy[iy] + wy[iy]):
                        base = (jz * ny + jy) * nx
                        for jx in range(lox[ix], lox[ix] + wx[ix]):
                            out[k] = base + jx
                            k += 1
    return out


def _build_indices_numpy(indptr, n13, lox, wx, loy, wy, loz, wz):
    nx, ny, nz = (int(v) for v in n13)
    out = np.empty(int(indptr[-1]), dtype=np.int32)
    for iz in range(nz):
        zs = np.arange(loz[iz], loz[iz] + wz[iz])
        for iy in range(ny):
            ys = np.arange(loy[iy], loy[iy] + wy[iy])
            zy = ((zs[:, None] * ny + ys[None, :]) * nx).ravel()
            for ix in range(nx):
                r = (iz * ny + iy) * nx + ix
                xs = np.arange(lox[ix], lox[ix] + wx[ix])
                out[indptr[r]:indptr[r + 1]] = (zy[:, None] + xs[None, :]).ravel()
    return out


# ----------------------------------------------------------------------------
# element block scatter (assembly) and gather (principal sub-blocks)
# ----------------------------------------------------------------------------


@njit
def _scatter_blocks_numba(data, blocks, elems, indptr, nelem3, order3, n13,
                          lox, wx, loy, wy, loz, wz):
    px, py, pz = order3[0], order3[1], order3[2]
    mx, my, mz = px + 1, py + 1, pz + 1
    nx, ny = n13[0], n13[1]
    for c in range(elems.size):
        e = elems[c]
        ex = e % nelem3[0]
        ey = (e // nelem3[0]) % nelem3[1]
        ez = e // (nelem3[0] * nelem3[1])
        bx, by, bz = ex * px, ey * py, ez * pz
        a = 0
        for az in range(mz):
            iz = bz + az
            for ay in range(my):
                iy = by + ay
                for ax in range(mx):
                    ix = bx + ax
                    r = (iz * ny + iy) * nx + ix
                    base = indptr[r]
                    b = 0
                    for cz in range(mz):
                        oz = (bz + cz - loz[iz]) * wy[iy]
                        for cy in range(my):
                            oy = (oz + by + cy - loy[iy]) * wx[ix]
                            for cx in range(mx):
                                data[base + oy + bx + cx - lox[ix]] += blocks[c, a, b]
                                b += 1
                    a += 1


def _block_positions(elems, indptr, nelem3, order3, n13, lox, wx, loy, wy, loz, wz):
    """Positions in ``data`` of every (element, i, j) entry, shape (C, m, m)."""
    elems = np.asarray(elems)
    px, py, pz = (int(v) for v in order3)
    nx, ny = int(n13[0]), int(n13[1])
    ex = elems % nelem3[0]
    ey = (elems // nelem3[0]) % nelem3[1]
    ez = elems // (nelem3[0] * nelem3[1])
    lz, ly, lx = np.meshgrid(np.arange(pz + 1), np.arange(py + 1), np.arange(px + 1), indexing="ij")
    lz, ly, lx = lz.ravel(), ly.ravel(), lx.ravel()
    iz = (ez * pz)[:, None] + lz[None, :]
    iy = (ey * py)[:, None] + ly[None, :]
    ix = (ex * px)[:, None] + lx[None, :]
    r = (iz * ny + iy) * nx + ix
    # column lattice coordinates share the element's base
    jz, jy, jx = iz[:, None, :], iy[:, None, :], ix[:, None, :]
    iz, iy, ix, r = iz[:, :, None], iy[:, :, None], ix[:, :, None], r[:, :, None]
    return indptr[r] + ((jz - loz[iz]) * wy[iy] + (jy - loy[iy])) * wx[ix] + (jx - lox[ix])


def _scatter_blocks_numpy(data, blocks, elems, *layout):
    pos = _block_positions(elems, *layout)
    np.add.at(data, pos.ravel(), np.asarray(blocks).ravel())


@njit
def _gather_blocks_numba(data, elems, indptr, nelem3, order3, n13,
                         lox, wx, loy, wy, loz, wz):
    px, py, pz = order3[0], order3[1], order3[2]
    mx, my, mz = px + 1, py + 1, pz + 1
    m = mx * my * mz
    nx, ny = n13[0], n13[1]
    out = np.empty((elems.size, m, m))
    for c in range(elems.size):
        e = elems[c]
        ex = e % nelem3[0]
        ey = (e // nelem3[0]) % nelem3[1]
        ez = e // (nelem3[0] * nelem3[1])
        bx, by, bz = ex * px, ey * py, ez * pz
        a = 0
        for az in range(mz):
            iz = bz + az
            for ay in range(my):
                iy = by + ay
                for ax in range(mx):
                    ix = bx + ax
                    r = (iz * ny + iy) * nx + ix
                    base = indptr[r]
                    b = 0
                    for cz in range(mz):
                        oz = (bz + cz - loz[iz]) * wy[iy]
                        for cy in range(my):
                            oy = (oz + by + cy - loy[iy]) * wx[ix]
                            for cx in range(mx):
                                out[c, a, b] = data[base + oy + bx + cx - lox[ix]]
                                b += 1
                    a += 1
    return out


def _gather_blocks_numpy(data, elems, *layout):
    return data[_block_positions(elems, *layout)]


# ----------------------------------------------------------------------------
# element-vector gather / scatter-add
# ----------------------------------------------------------------------------


@njit
def _scatter_add_numba(out, elem_to_dof, values):
    E, m = elem_to_dof.shape
    for e in range(E):
        for a in range(m):
            out[elem_to_dof[e, a]] += values[e, a]
    return out


def _scatter_add_numpy(out, elem_to_dof, values):
    out += np.bincount(elem_to_dof.ravel(), weights=values.ravel(), minlength=out.size)
    return out


# ----------------------------------------------------------------------------
# Gauss-Seidel sweeps in lexicographic order
# ----------------------------------------------------------------------------


@njit
def _gs_sweep_numba(indptr, indices, data, x, b, skip, reverse):
    n = indptr.size - 1
    for t in range(n):
        i = n - 1 - t if reverse else t
        if skip[i]:
            continue
        s = b[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j == i:
                diag = data[k]
            else:
                s -= data[k] * x[j]
        x[i] = s / diag


_TRIANGLE_CACHE = {}


def _triangles(A):
    import scipy.sparse as sp

    key = id(A)
    hit = _TRIANGLE_CACHE.get(key)
    if hit is not None and hit[0] is A:
        return hit[1], hit[2]
    lower = sp.tril(A, format="csr")
    upper = sp.triu(A, format="csr")
    _TRIANGLE_CACHE.clear()
    _TRIANGLE_CACHE[key] = (A, lower, upper)
    return lower, upper


def _gs_sweep_numpy(indptr, indices, data, x, b, skip, reverse, A=None):
    import scipy.sparse as sp
    from scipy.sparse.linalg import spsolve_triangular

    if A is None:
        n = indptr.size - 1
        A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    lower, upper = _triangles(A)
    diag = A.diagonal()
    rhs = b.copy()
    if reverse:
        rhs -= lower @ x - diag * x
        rhs[skip] = x[skip] * diag[skip]
        x[:] = spsolve_triangular(upper, rhs, lower=False)
    else:
        rhs -= upper @ x - diag * x
        rhs[skip] = x[skip] * diag[skip]
        x[:] = spsolve_triangular(lower, rhs, lower=True)


# ----------------------------------------------------------------------------
# dense symmetric eigensolver: Householder tridiagonalization + implicit QL
# (EISPACK tred2/tql2 lineage)
# ----------------------------------------------------------------------------


@njit
def _tred2_numba(V):
    n = V.shape[0]
    d = np.empty(n)
    e = np.zeros(n)
    for j in range(n):
        d[j] = V[n - 1, j]
    for i in range(n - 1, 0, -1):
        scale = 0.0
        h = 0.0
        for k in range(i):
            scale += abs(d[k])
        if scale == 0.0:
            e[i] = d[i - 1]
            for j in range(i):
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
                V[j, i] = 0.0
        else:
            for k in range(i):
                d[k] /= scale
                h += d[k] * d[k]
            f = d[i - 1]
            g = np.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h = h - f * g
            d[i - 1] = f - g
            for j in range(i):
                e[j] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                g = e[j] + V[j, j] * f
                for k in range(j + 1, i):
                    g += V[k, j] * d[k]
                    e[k] += V[k, j] * f
                e[j] = g
            f = 0.0
            for j in range(i):
                e[j] /= h
                f += e[j] * d[j]
            hh = f / (h + h)
            for j in range(i):
                e[j] -= hh * d[j]
            for j in range(i):
                f = d[j]
                g = e[j]
                for k in range(j, i):
                    V[k, j] -= f * e[k] + g * d[k]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h
    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            for k in range(i + 1):
                d[k] = V[k, i + 1] / h
            for j in range(i + 1):
                g = 0.0
                for k in range(i + 1):
                    g += V[k, i + 1] * V[k, j]
                for k in range(i + 1):
                    V[k, j] -= g * d[k]
        for k in range(i + 1):
            V[k, i + 1] = 0.0
    for j in range(n):
        d[j] = V[n - 1, j]
        V[n - 1, j] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0
    return d, e


@njit
def _tql2_numba(V, d, e):
    n = d.size
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    f = 0.0
    tst1 = 0.0
    eps = 2.0**-52
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n:
            if abs(e[m]) <= eps * tst1:
                break
            m += 1
        if m > l:
            while True:
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = np.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[m]
                c = 1.0
                c2 = c
                c3 = c
                el1 = e[l + 1]
                s = 0.0
                s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = np.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    for k in range(n):
                        h = V[k, i + 1]
                        V[k, i + 1] = s * V[k, i] + c * h
                        V[k, i] = c * V[k, i] - s * h
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] = d[l] + f
        e[l] = 0.0


def _tred2_numpy(V):
    """Householder reduction with vectorized rank-2 updates (no eigvec loop)."""
    A = V.copy()
    n = A.shape[0]
    Q = np.eye(n)
    d = np.empty(n)
    e = np.zeros(n)
    for k in range(n - 2):
        x = A[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        sub = A[k + 1:, k + 1:]
        w = sub @ v
        kappa = v @ w
        w -= kappa * v
        sub -= 2.0 * (np.outer(v, w) + np.outer(w, v))
        A[k + 1:, k] = 0.0
        A[k, k + 1:] = 0.0
        A[k + 1, k] = A[k, k + 1] = alpha
        Q[:, k + 1:] -= 2.0 * np.outer(Q[:, k + 1:] @ v, v)
    d[:] = np.diag(A)
    e[1:] = np.diag(A, -1)
    V[:] = Q
    return d, e


def _tql2_numpy(V, d, e):
    n = d.size
    e[:-1] = e[1:]
    e[-1] = 0.0
    f = 0.0
    tst1 = 0.0
    eps = 2.0**-52
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n and abs(e[m]) > eps * tst1:
            m += 1
        if m > l:
            while True:
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = np.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2:] -= h
                f += h
                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3, c2, s2 = c2, c, s
                    g = c * e[i]
                    h = c * p
                    r = np.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    vi = V[:, i].copy()
                    V[:, i] = c * vi - s * V[:, i + 1]
                    V[:, i + 1] = s * vi + c * V[:, i + 1]
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] += f
        e[l] = 0.0


def _symmetric_eig_impl(tred2, tql2):
    def eig(A):
        V = np.array(A, dtype=np.float64, order="C", copy=True)
        d, e = tred2(V)
        tql2(V, d, e)
        order = np.argsort(d, kind="stable")
        return d[order], np.ascontiguousarray(V[:, order])

    return eig


# ----------------------------------------------------------------------------
# dispatch
# ----------------------------------------------------------------------------

build_indices = select(_build_indices_numba, _build_indices_numpy)
scatter_blocks = select(_scatter_blocks_numba, _scatter_blocks_numpy)
gather_blocks = select(_gather_blocks_numba, _gather_blocks_numpy)
scatter_add = select(_scatter_add_numba, _scatter_add_numpy)
symmetric_eig = select(
    _symmetric_eig_impl(_tred2_numba, _tql2_numba),
    _symmetric_eig_impl(_tred2_numpy, _tql2_numpy),
)


def gs_sweep(A, x, b, skip, reverse=False):
    """One in-place Gauss-Seidel sweep on CSR ``A``; rows in ``skip`` untouched."""
    if _accel_numba():
        _gs_sweep_numba(A.indptr, A.indices, A.data, x, b, skip, reverse)
    else:
        _gs_sweep_numpy(A.indptr, A.indices, A.data, x, b, skip, reverse, A=A)


def _accel_numba():
    from . import _accel

    return _accel.USE_NUMBA
