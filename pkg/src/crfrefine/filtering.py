"""High-dimensional Gaussian filtering.

Every filter here computes (an approximation of)

    out_i = sum_j exp(-|f_i - f_j|^2 / 2) * v_j

for features ``f`` (n x d) that have already been divided by their kernel
bandwidths, and values ``v`` (n x V).  ``gaussian_filter_exact`` is the O(n^2)
reference; ``Permutohedral`` is the splat/blur/slice lattice approximation
used for inference.
"""
import math

import numba
import numpy as np

NORMALIZE_NONE = "none"
NORMALIZE_SYMMETRIC = "symmetric"
NORMALIZE_MODES = (NORMALIZE_NONE, NORMALIZE_SYMMETRIC)


def _check(values, features):
    v = np.asarray(values)
    f = np.asarray(features)
    if f.ndim != 2 or f.shape[1] == 0:
        raise ValueError(f"features must be (n, d) with d >= 1, got shape {f.shape}")
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] != f.shape[0]:
        raise ValueError(f"values {v.shape} and features {f.shape} disagree on n_points")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite features or values")
    return v, f


def gaussian_filter_exact(values, features, chunk=1024):
    """Brute-force Gaussian filter, self term included (float64 accumulation).

    ``values`` may be (n,) or (n, V); the output has the same shape.
    """
    squeeze = np.ndim(values) == 1
    v, f = _check(values, features)
    v = v.astype(np.float64)
    f = f.astype(np.float64)
    sq = np.einsum("ij,ij->i", f, f)
    out = np.empty_like(v)
    for start in range(0, f.shape[0], chunk):
        fi = f[start:start + chunk]
        d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * fi @ f.T
        np.maximum(d2, 0.0, out=d2)
        out[start:start + chunk] = np.exp(-0.5 * d2) @ v
    return out[:, 0] if squeeze else out


def bilateral_features(image, sigma_alpha, sigma_beta):
    """Rows ``(x/sa, y/sa, R/sb, G/sb, B/sb)`` in row-major pixel order."""
    if sigma_alpha <= 0 or sigma_beta <= 0:
        raise ValueError("bandwidths must be positive")
    img = np.asarray(image)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    feats = np.empty((h * w, 5), dtype=np.float32)
    feats[:, 0] = xs.ravel() / sigma_alpha
    feats[:, 1] = ys.ravel() / sigma_alpha
    feats[:, 2:] = img.reshape(-1, 3).astype(np.float32) / sigma_beta
    return feats


def spatial_features(height, width, sigma_gamma):
    """Rows ``(x/sg, y/sg)`` in row-major pixel order."""
    if sigma_gamma <= 0:
        raise ValueError("bandwidth must be positive")
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float32) / np.float32(sigma_gamma)


@numba.njit(cache=True, nogil=True)
def _blur_axis(src, dst, minus, plus):
    # [1, 2, 1] / 4 along one lattice axis; row m of src is the all-zero sentinel
    m, c = dst.shape[0] - 1, dst.shape[1]
    for i in range(m):
        a = minus[i]
        b = plus[i]
        for k in range(c):
            dst[i, k] = 0.5 * src[i, k] + 0.25 * (src[a, k] + src[b, k])
    for k in range(c):
        dst[m, k] = 0.0


@numba.njit(cache=True, nogil=True)
def _splat(values, slots, weights, m):
    out = np.zeros((m + 1, values.shape[1]), dtype=np.float32)
    n, d1 = slots.shape
    c = values.shape[1]
    for i in range(n):
        for r in range(d1):
            j = slots[i, r]
            wt = weights[i, r]
            for k in range(c):
                out[j, k] += wt * values[i, k]
    return out


@numba.njit(cache=True, nogil=True)
def _slice(lattice, slots, weights, gain):
    n, d1 = slots.shape
    c = lattice.shape[1]
    out = np.zeros((n, c), dtype=np.float32)
    for i in range(n):
        for r in range(d1):
            j = slots[i, r]
            wt = weights[i, r] * gain
            for k in range(c):
                out[i, k] += wt * lattice[j, k]
    return out


@numba.njit(cache=True, nogil=True)
def _sorted_lookup(table, queries):
    # both arrays ascending; position of each query in table, or len(table) if absent
    out = np.empty(queries.size, dtype=np.int64)
    j = 0
    m = table.size
    for i in range(queries.size):
        q = queries[i]
        while j < m and table[j] < q:
            j += 1
        out[i] = j if j < m and table[j] == q else m
    return out


class _KeyPacker:
    """Packs integer lattice coordinates into int64 codes, linearly.

    Linearity makes a neighbour's code the vertex code plus a constant offset.
    """

    def __init__(self, keys, pad):
        # pad leaves room for neighbour probes, which move each coordinate by <= pad
        self.lo = keys.min(axis=0) - pad
        span = keys.max(axis=0) + pad + 1 - self.lo
        self.radix = np.ones(keys.shape[1], dtype=np.int64)
        total = 1
        for k in range(keys.shape[1] - 1, -1, -1):
            self.radix[k] = total
            total *= int(span[k])
        if total >= 2 ** 62:
            raise OverflowError("lattice key range too large to pack into int64")

    def encode(self, keys):
        return (keys - self.lo) @ self.radix

    def axis_offsets(self, axis):
        """Code offsets of the two neighbours along blur axis ``axis`` (0..d)."""
        d = self.radix.size
        minus = np.full(d, -1, dtype=np.int64)
        if axis < d:
            minus[axis] = d
        return int(minus @ self.radix), int(-minus @ self.radix)


class Permutohedral:
    """Permutohedral-lattice Gaussian filter for one fixed feature set.

    Building the lattice (``__init__``) costs one pass over the points; each
    call to :meth:`filter` then costs a splat, ``d + 1`` blur passes
    with a ``[1, 2, 1] / 4`` stencil, and a sparse slice.  Raw outputs are
    scaled so that they estimate ``gaussian_filter_exact``.
    """

    def __init__(self, features, closed=False):
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] == 0:
            raise ValueError(f"features must be (n, d) with d >= 1, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite features")
        n, d = f.shape
        self.n_points, self.dim = n, d
        d1 = d + 1

        # embed into the hyperplane sum(x) = 0 of R^(d+1), scaled so the
        # lattice blur has roughly unit variance in feature units
        inv_std = math.sqrt(2.0 / 3.0) * d1
        scale = inv_std / np.sqrt(np.arange(1, d + 1) * np.arange(2, d + 2))
        cf = f * scale
        tail = np.cumsum(cf[:, ::-1], axis=1)[:, ::-1]  # tail[:, j] = sum_{k >= j} cf[:, k]
        elevated = np.empty((n, d1))
        elevated[:, 0] = tail[:, 0]
        j = np.arange(1, d1)
        elevated[:, 1:] = np.concatenate([tail[:, 1:], np.zeros((n, 1))], axis=1) - j * cf

        # nearest remainder-0 lattice point, ties rounded down
        v = elevated / d1
        lower = np.floor(v) * d1
        upper = np.ceil(v) * d1
        rem0 = np.where(upper - elevated < elevated - lower, upper, lower).astype(np.int64)
        ssum = rem0.sum(axis=1) // d1

        # rank of each coordinate's residual, descending, ties by index
        resid = elevated - rem0
        order = np.argsort(-resid, axis=1, kind="stable")
        rank = np.empty((n, d1), dtype=np.int64)
        rows = np.arange(n)[:, None]
        rank[rows, order] = np.arange(d1)

        # walk back onto the plane when the rounded point left it
        s = ssum[:, None]
        pos = s > 0
        hi = pos & (rank >= d1 - s)
        rem0 = np.where(hi, rem0 - d1, rem0)
        rank = np.where(pos, np.where(hi, rank + s - d1, rank + s), rank)
        neg = s < 0
        lo = neg & (rank < -s)
        rem0 = np.where(lo, rem0 + d1, rem0)
        rank = np.where(neg, np.where(lo, rank + d1 + s, rank + s), rank)

        # barycentric coordinates inside the enclosing simplex
        resid = (elevated - rem0) / d1
        bary = np.zeros((n, d1 + 1))
        bary[rows, d - rank] += resid
        bary[rows, d - rank + 1] -= resid
        bary[:, 0] += 1.0 + bary[:, d1]
        bary = bary[:, :d1]

        # the d+1 simplex vertices of every point (first d coordinates suffice)
        vert = np.empty((n, d1, d), dtype=np.int64)
        for r in range(d1):
            canon = np.where(rank[:, :d] <= d - r, r, r - d1)
            vert[:, r, :] = rem0[:, :d] + canon
        flat = vert.reshape(-1, d)

        # closure grows coordinates by <= d per axis pass, d+1 passes, plus the final probe
        packer = _KeyPacker(flat, pad=d1 * (d1 + 1) if closed else d1)
        codes = packer.encode(flat)
        if closed:
            uniq = self._close(packer, np.unique(codes), d)
            slot = np.searchsorted(uniq, codes)
        else:
            uniq, slot = np.unique(codes, return_inverse=True)
        m = uniq.size
        self.n_lattice = m

        # blur neighbours along each of the d+1 lattice axes; missing -> m (zero row)
        neighbours = []
        for axis in range(d1):
            off_minus, off_plus = packer.axis_offsets(axis)
            neighbours.append((_sorted_lookup(uniq, uniq + off_minus), _sorted_lookup(uniq, uniq + off_plus)))

        # renumber vertices in order of first use by the points, so that points
        # close in input order touch lattice rows close in memory
        first = np.full(m, slot.size, dtype=np.int64)
        np.minimum.at(first, slot, np.arange(slot.size))
        relabel = np.empty(m + 1, dtype=np.int64)
        relabel[np.argsort(first, kind="stable")] = np.arange(m)
        relabel[m] = m
        self._slots = relabel[slot].reshape(n, d1)
        self._weights = bary.astype(np.float32)
        self._neighbours = []
        for minus, plus in neighbours:
            nm, npl = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
            nm[relabel[:m]] = relabel[minus]
            npl[relabel[:m]] = relabel[plus]
            self._neighbours.append((nm, npl))

        # self-normalising the analytic gain: Gaussian mass / lattice cell volume
        cell = d1 ** (d - 1) * math.sqrt(d1) / inv_std ** d
        self.gain = (2.0 * math.pi) ** (d / 2.0) / cell
        self._ones = None

    @staticmethod
    def _close(packer, codes, d):
        # every vertex the sequential axis blurs can reach from a splatted vertex
        for axis in range(d + 1):
            off_minus, off_plus = packer.axis_offsets(axis)
            codes = np.unique(np.concatenate([codes, codes + off_minus, codes + off_plus]))
        return codes

    def _raw(self, values):
        lat = _splat(np.ascontiguousarray(values, dtype=np.float32), self._slots, self._weights, self.n_lattice)
        spare = np.empty_like(lat)
        for minus, plus in self._neighbours:
            _blur_axis(lat, spare, minus, plus)
            lat, spare = spare, lat
        return _slice(lat, self._slots, self._weights, np.float32(self.gain))

    def ones_response(self):
        """Filtered all-ones field (per-point kernel mass), cached."""
        if self._ones is None:
            self._ones = self._raw(np.ones((self.n_points, 1), dtype=np.float32))[:, 0]
        return self._ones

    def filter(self, values, normalize=NORMALIZE_NONE):
        v = np.asarray(values, dtype=np.float32)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.n_points:
            raise ValueError(f"values {v.shape} do not match lattice of {self.n_points} points")
        out = self._raw(v)
        if normalize == NORMALIZE_SYMMETRIC:
            out = out / self.ones_response()[:, None]
        elif normalize != NORMALIZE_NONE:
            raise ValueError(f"unknown normalize mode {normalize!r}")
        return out[:, 0] if squeeze else out


def permutohedral_filter(values, features, normalize=NORMALIZE_NONE):
    """One-shot lattice filter; build a :class:`Permutohedral` to reuse it."""
    v, f = _check(values, features)
    return Permutohedral(f).filter(v, normalize=normalize)


class ExactFilter:
    """Brute-force counterpart of :class:`Permutohedral` with the same interface."""

    def __init__(self, features):
        self.features = np.asarray(features, dtype=np.float64)
        self.n_points = self.features.shape[0]
        self._ones = None

    def ones_response(self):
        if self._ones is None:
            self._ones = gaussian_filter_exact(np.ones((self.n_points, 1)), self.features)[:, 0]
        return self._ones

    def filter(self, values, normalize=NORMALIZE_NONE):
        v = np.asarray(values, dtype=np.float64)
        out = gaussian_filter_exact(v, self.features)
        if normalize == NORMALIZE_SYMMETRIC:
            out = out / (self.ones_response()[:, None] if out.ndim == 2 else self.ones_response())
        elif normalize != NORMALIZE_NONE:
            raise ValueError(f"unknown normalize mode {normalize!r}")
        return out
