"""Exact maximisation of ``|a^T B|^2 / N_a`` over non-empty binary ``a``.

Three routes are provided: exhaustive enumeration (small N only), Dinkelbach
iteration over a parametric subproblem, and a direct angle sweep. The last two
rely on the fact that ``Q = Re(B B^H)`` has rank at most two: for the optimal
subset with sum ``z`` every selected antenna projects further onto ``z`` than
every unselected one, so optimal sets are prefixes of the projection order
along some planar direction. The order only changes where two projections tie,
so sweeping those critical angles visits every candidate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ChannelVector, SystemConfig, achievable_rate

BRUTE_FORCE_MAX_N = 25
TIE_RTOL = 1e-12
ANGLE_DEDUP = 1e-12
_DEFAULT_RHO = SystemConfig().rho


class Method(enum.Enum):
    BRUTE_FORCE = "brute"
    DINKELBACH = "dinkelbach"
    ANGLE_SWEEP = "sweep"


class DinkelbachError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass
class QfSolution:
    activation: np.ndarray  # bool (N,)
    objective: float
    snr: float
    rate: float
    method: Method
    iterations: int = 0
    lambda_trace: list = field(default_factory=list)
    certificate: float | None = None  # max_a a^T Q a - lambda* N_a (Dinkelbach only)

    @property
    def n_active(self) -> int:
        return int(self.activation.sum())

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.activation)


@dataclass(frozen=True)
class DinkelbachConfig:
    tolerance: float = 1e-9
    max_iterations: int = 100
    initial_lambda: float | None = None  # None: best single antenna

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_lambda is not None and self.initial_lambda < 0:
            raise ValueError("initial_lambda must be non-negative")


def _as_gains(channel) -> np.ndarray:
    if isinstance(channel, ChannelVector):
        return channel.gains
    return np.asarray(channel, dtype=complex).reshape(-1)


def _solution(gains, bits, method, rho, **extra) -> QfSolution:
    k = int(bits.sum())
    objective = float(abs(gains[bits].sum()) ** 2) / k
    snr = (_DEFAULT_RHO if rho is None else rho) * objective
    return QfSolution(bits, objective, snr, achievable_rate(snr), method, **extra)


class _Incumbent:
    """Best candidate so far under the deterministic tie rule.

    Ties (within a relative ``TIE_RTOL``) prefer fewer active antennas, then
    the lexicographically smallest sorted index tuple.
    """

    def __init__(self, scale, value=-math.inf, members=()):
        self.floor = scale
        self.value = value
        self.members = tuple(sorted(members))

    def offer(self, value, k, members_fn):
        if self.value == -math.inf:
            self.value, self.members = value, tuple(sorted(members_fn()))
            return
        tol = TIE_RTOL * max(abs(self.value), abs(value), self.floor)
        if value > self.value + tol:
            self.value, self.members = value, tuple(sorted(members_fn()))
        elif value >= self.value - tol:
            if k < len(self.members):
                self.value, self.members = value, tuple(sorted(members_fn()))
            elif k == len(self.members):
                cand = tuple(sorted(members_fn()))
                if cand < self.members:
                    self.value, self.members = value, cand


def _ordering(gains, phi):
    proj = (gains * np.exp(-1j * phi)).real
    return np.lexsort((np.arange(gains.size), -proj))


def _critical_events(gains):
    n = gains.size
    i, j = np.triu_indices(n, 1)
    diff = gains[i] - gains[j]
    keep = diff != 0
    i, j, base = i[keep], j[keep], np.angle(diff[keep])
    angles = np.mod(np.concatenate([base + np.pi / 2, base - np.pi / 2]), 2 * np.pi)
    first = np.concatenate([i, i])
    second = np.concatenate([j, j])
    order = np.argsort(angles, kind="stable")
    return angles[order], first[order], second[order]


def _sweep(gains, lam=None):
    """Best prefix set over every projection ordering.

    With ``lam=None`` the score is ``|S|^2 / k`` over non-empty prefixes;
    otherwise ``|S|^2 - lam * k`` with the empty set (score 0) admissible.
    """
    n = gains.size
    scale = float(np.max(np.abs(gains)) ** 2)
    best = _Incumbent(scale) if lam is None else _Incumbent(scale, 0.0, ())

    def score_all(prefix):
        k = np.arange(1, n + 1)
        power = prefix.real ** 2 + prefix.imag ** 2
        return power / k if lam is None else power - lam * k

    def offer_all(order):
        prefix = np.cumsum(gains[order])
        scores = score_all(prefix)
        top = float(scores.max())
        tol = TIE_RTOL * max(abs(top), scale)
        for k in np.flatnonzero(scores >= top - tol) + 1:
            best.offer(float(scores[k - 1]), int(k), lambda k=k: order[:k].tolist())
        return prefix

    angles, first, second = _critical_events(gains)
    if angles.size == 0:
        offer_all(_ordering(gains, 0.0))
        return best

    # start in the middle of the widest gap between consecutive critical angles
    gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
    g = int(np.argmax(gaps))
    start = angles[g] + gaps[g] / 2
    order = _ordering(gains, start)
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    prefix = offer_all(order)

    m = angles.size
    seq = np.roll(np.arange(m), -(g + 1))
    ang = angles[seq]
    a_idx, b_idx = first[seq].tolist(), second[seq].tolist()
    unwrapped = np.where(ang < ang[0], ang + 2 * np.pi, ang)
    nxt = np.append(unwrapped[1:], unwrapped[0] + 2 * np.pi)
    # group boundaries: events closer than ANGLE_DEDUP are treated as simultaneous
    lone = np.diff(unwrapped, append=unwrapped[0] + 2 * np.pi) > ANGLE_DEDUP
    lone &= np.diff(unwrapped, prepend=unwrapped[-1] - 2 * np.pi) > ANGLE_DEDUP
    lone = lone.tolist()
    unwrapped = unwrapped.tolist()
    nxt = nxt.tolist()

    order_l = order.tolist()
    pos_l = pos.tolist()
    pre = prefix.tolist()
    g_list = gains.tolist()
    inc = best
    e = 0
    while e < m:
        if lone[e]:
            p, q = pos_l[a_idx[e]], pos_l[b_idx[e]]
            if p - q == 1 or q - p == 1:
                i = p if p < q else q
                u, v = order_l[i], order_l[i + 1]
                order_l[i], order_l[i + 1] = v, u
                pos_l[u], pos_l[v] = i + 1, i
                s = (pre[i - 1] if i else 0j) + g_list[v]
                pre[i] = s
                k = i + 1
                power = s.real * s.real + s.imag * s.imag
                val = power / k if lam is None else power - lam * k
                if val >= inc.value - TIE_RTOL * max(abs(val), scale):
                    inc.offer(val, k, lambda k=k: order_l[:k])
                e += 1
                continue
            last = e
        else:
            last = e
            while last + 1 < m and not lone[last + 1] and \
                    unwrapped[last + 1] - unwrapped[last] <= ANGLE_DEDUP:
                last += 1
        # degenerate crossing: re-sort just past the group and rescan every prefix
        phi = 0.5 * (unwrapped[last] + nxt[last])
        order = _ordering(gains, phi)
        order_l = order.tolist()
        pos_arr = np.empty(n, dtype=np.int64)
        pos_arr[order] = np.arange(n)
        pos_l = pos_arr.tolist()
        pre = offer_all(order).tolist()
        e = last + 1
    return best


def subproblem_exact(channel, lam: float) -> np.ndarray:
    """Maximiser of ``|a^T B|^2 - lam * N_a`` over all binary ``a`` (empty allowed)."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    gains = _as_gains(channel)
    best = _sweep(gains, lam)
    bits = np.zeros(gains.size, dtype=bool)
    bits[list(best.members)] = True
    return bits


def angle_sweep_max_ratio(channel, rho=None) -> QfSolution:
    gains = _as_gains(channel)
    best = _sweep(gains)
    bits = np.zeros(gains.size, dtype=bool)
    bits[list(best.members)] = True
    return _solution(gains, bits, Method.ANGLE_SWEEP, rho)


def _subset_sums(gains):
    """Sums and sizes of all 2^N subsets; bit j of the subset index selects antenna j."""
    sums = np.zeros(1, dtype=complex)
    sizes = np.zeros(1, dtype=np.int64)
    for g in gains:
        sums = np.concatenate([sums, sums + g])
        sizes = np.concatenate([sizes, sizes + 1])
    return sums, sizes


def brute_force(channel, rho=None) -> QfSolution:
    gains = _as_gains(channel)
    n = gains.size
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force refuses N = {n} > {BRUTE_FORCE_MAX_N} (2^N subsets)")
    low = min(n, 20)
    sums, sizes = _subset_sums(gains[:low])
    high_sums, high_sizes = _subset_sums(gains[low:])
    scale = float(np.max(np.abs(gains)) ** 2)
    best = _Incumbent(scale)
    for hi, (hs, hk) in enumerate(zip(high_sums, high_sizes)):
        total = sums + hs
        k = sizes + hk
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(k > 0, (total.real ** 2 + total.imag ** 2) / np.maximum(k, 1), -np.inf)
        top = float(ratio.max())
        tol = TIE_RTOL * max(abs(top), scale)
        for idx in np.flatnonzero(ratio >= top - tol):
            code = int(idx) | (hi << low)
            members = [b for b in range(n) if code >> b & 1]
            best.offer(float(ratio[idx]), len(members), lambda m=members: m)
    bits = np.zeros(n, dtype=bool)
    bits[list(best.members)] = True
    return _solution(gains, bits, Method.BRUTE_FORCE, rho)


def dinkelbach(channel, cfg: DinkelbachConfig | None = None, subsolver=subproblem_exact,
               rho=None) -> QfSolution:
    """Dinkelbach iteration; ``subsolver(channel, lam)`` must solve the parametric problem exactly."""
    cfg = cfg or DinkelbachConfig()
    gains = _as_gains(channel)

    def power(bits):
        return float(abs(gains[bits].sum()) ** 2)

    incumbent = None
    if cfg.initial_lambda is None:
        incumbent = np.zeros(gains.size, dtype=bool)
        incumbent[int(np.argmax(np.abs(gains)))] = True
        lam = power(incumbent)
    else:
        lam = float(cfg.initial_lambda)
    trace = [lam]

    for it in range(1, cfg.max_iterations + 1):
        bits = subsolver(gains, lam)
        k = int(bits.sum())
        value = power(bits) - lam * k if k else 0.0
        if value <= cfg.tolerance or k == 0:
            if incumbent is None:
                raise DinkelbachError("subproblem returned no usable activation", trace)
            return _solution(gains, incumbent, Method.DINKELBACH, rho, iterations=it,
                             lambda_trace=trace, certificate=value)
        new_lam = power(bits) / k
        if not new_lam > lam:
            raise DinkelbachError(
                f"lambda failed to increase at iteration {it} ({new_lam!r} <= {lam!r})", trace)
        incumbent, lam = bits, new_lam
        trace.append(lam)
        if new_lam - trace[-2] <= cfg.tolerance:
            # lambda has settled; confirm with one more parametric solve
            check = subsolver(gains, lam)
            kc = int(check.sum())
            cert = power(check) - lam * kc if kc else 0.0
            return _solution(gains, incumbent, Method.DINKELBACH, rho, iterations=it + 1,
                             lambda_trace=trace, certificate=cert)
    raise DinkelbachError(f"no convergence within {cfg.max_iterations} iterations", trace)


# ---------------------------------------------------------------------------
# Q decomposition and B reconstruction


@dataclass
class QDecomposition:
    eigenvalues: np.ndarray  # (2,), descending, non-negative
    eigenvectors: np.ndarray  # (N, 2), orthonormal columns


def _check_residual(q, dec):
    lam, u = dec.eigenvalues, dec.eigenvectors
    residual = np.linalg.norm(q - (u * lam) @ u.T)
    if residual > 1e-8 * max(np.linalg.norm(q), np.finfo(float).tiny):
        raise ValueError(f"Q not rank-2 (reconstruction residual {residual:.3e})")


def _ritz(q, basis):
    small = basis.T @ q @ basis
    small = 0.5 * (small + small.T)
    vals, vecs = np.linalg.eigh(small)
    order = np.argsort(vals)[::-1]
    return np.clip(vals[order], 0.0, None), basis @ vecs[:, order]


def decompose_q(q, channel=None, tol=1e-12, max_iter=10_000) -> QDecomposition:
    """Top two eigenpairs of a rank <= 2 PSD matrix.

    With the channel at hand the problem reduces exactly to 2x2 on
    ``span(Re B, Im B)``. Otherwise a two-vector block power iteration with a
    Rayleigh-Ritz step is run; on a rank-2 matrix it settles after one pass.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if n == 1:
        return QDecomposition(np.array([max(q[0, 0], 0.0), 0.0]), np.array([[1.0, 0.0]]))
    if channel is not None:
        gains = _as_gains(channel)
        span = np.stack([gains.real, gains.imag], axis=1)
        basis, _ = np.linalg.qr(span)
        if np.linalg.matrix_rank(span) < 2:
            basis = _complete_basis(basis[:, :1])
        vals, vecs = _ritz(q, basis)
    else:
        rng = np.random.default_rng(0)
        basis, _ = np.linalg.qr(rng.standard_normal((n, 2)))
        prev = None
        for _ in range(max_iter):
            vals, vecs = _ritz(q, basis)
            moved = q @ vecs
            if np.linalg.norm(moved[:, 1]) <= tol * max(np.linalg.norm(moved[:, 0]), 1e-300):
                # rank one: Q v spans the range of Q; complete the basis
                basis = _complete_basis(moved[:, :1] / np.linalg.norm(moved[:, 0]))
                vals, vecs = _ritz(q, basis)
                break
            basis, _ = np.linalg.qr(moved)
            if prev is not None and np.all(np.abs(vals - prev) <= tol * max(vals[0], 1e-300)):
                vals, vecs = _ritz(q, basis)
                break
            prev = vals
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    for col in range(2):
        nz = np.flatnonzero(np.abs(vecs[:, col]) > 1e-14)
        if nz.size and vecs[nz[0], col] < 0:
            vecs[:, col] = -vecs[:, col]
    dec = QDecomposition(vals, vecs)
    _check_residual(q, dec)
    return dec


def _complete_basis(u):
    n = u.shape[0]
    e = np.zeros(n)
    e[int(np.argmin(np.abs(u[:, 0])))] = 1.0
    w = e - u[:, 0] * (u[:, 0] @ e)
    return np.stack([u[:, 0], w / np.linalg.norm(w)], axis=1)


def reconstruct_b(dec: QDecomposition) -> ChannelVector:
    """One complex vector ``B'`` with ``Re(B' B'^H) = Q``."""
    alpha, beta = np.sqrt(dec.eigenvalues)
    u1, u2 = dec.eigenvectors[:, 0], dec.eigenvectors[:, 1]
    return ChannelVector(alpha * u1 + 1j * beta * u2)


def solve(channel, method: Method | str = Method.ANGLE_SWEEP, rho=None) -> QfSolution:
    method = Method(method)
    if method is Method.BRUTE_FORCE:
        return brute_force(channel, rho)
    if method is Method.DINKELBACH:
        return dinkelbach(channel, rho=rho)
    return angle_sweep_max_ratio(channel, rho)
