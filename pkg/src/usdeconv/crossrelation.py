"""Block-wise crossrelation error, its cost and analytic gradients, the
variable step size, and the sequential per-block adaptive loop.

The solver state is one estimate per channel and block of the tissue
reflectivity function (TRF), held both as ``L_b`` real time coefficients and
as their cached ``2*L_b - 1`` spectra. Estimation runs block by block:
blocks ``1..b-1`` stay frozen while block ``b`` is adapted by frequency-
domain gradient descent with a projection step-size rule, followed each
iteration by a time-support projection (keep the first ``L_b`` time samples)
and joint renormalization of all active blocks to unit time-domain norm.

Channel indices in this module are 0-based; block indices (``b``, ``p``,
``q``) are 1-based, matching the algorithm's sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import signal_core as sc
from .errors import InvalidStateError, NumericalError
from .metrics import npm

# Squared-gradient-norm threshold below which the state is declared a fixed
# point and the step size is reported as zero.
GRAD_NORM_FLOOR = 1e-30

# Iterations spanned by the relative-cost plateau stopping rule.
PLATEAU_SPAN = 5


@dataclass
class TrfEstimate:
    """Per-channel, per-block TRF coefficients with cached spectra.

    Attributes
    ----------
    time : (M, B, L_b) ndarray
        Real time coefficients. Concatenation of blocks ``1..active_blocks``
        along the last axis is the usable estimate and has unit l2 norm
        after every solver update.
    specs : (M, B, 2*L_b - 1) ndarray
        Cached forward transforms of the zero-padded time coefficients.
    active_blocks : int
        Number of blocks estimated so far.
    """

    time: np.ndarray
    specs: np.ndarray
    plan: sc.BlockPlan
    active_blocks: int = 1

    @classmethod
    def initial(cls, M: int, plan: sc.BlockPlan) -> "TrfEstimate":
        """Unit impulse per channel in block 1, global norm 1."""
        if M < 2:
            raise ValueError(f"need at least 2 channels, got {M}")
        time = np.zeros((M, plan.B, plan.L_b))
        time[:, 0, 0] = 1.0 / math.sqrt(M)
        est = cls(time=time, specs=np.empty(0), plan=plan, active_blocks=1)
        est.refresh_specs()
        return est

    @classmethod
    def from_time(cls, time, plan: sc.BlockPlan,
                  active_blocks: Optional[int] = None) -> "TrfEstimate":
        t = np.ascontiguousarray(np.asarray(time, dtype=np.float64))
        if t.ndim != 3 or t.shape[1:] != (plan.B, plan.L_b):
            raise ValueError(
                f"time shape {t.shape} does not match plan (M, {plan.B}, {plan.L_b})"
            )
        est = cls(time=t, specs=np.empty(0), plan=plan,
                  active_blocks=plan.B if active_blocks is None else active_blocks)
        est.refresh_specs()
        return est

    @property
    def M(self) -> int:
        return self.time.shape[0]

    def refresh_specs(self) -> None:
        self.specs = sc.fft(self.time, n=self.plan.spectrum_len)

    def concatenated_time(self) -> np.ndarray:
        """Active blocks concatenated per channel: (M, active*L_b)."""
        a = self.active_blocks
        return self.time[:, :a, :].reshape(self.M, a * self.plan.L_b)

    def norm_active(self) -> float:
        return float(np.linalg.norm(self.time[:, : self.active_blocks, :]))

    def normalize_active(self) -> None:
        n = self.norm_active()
        if n == 0.0 or not math.isfinite(n):
            raise NumericalError(f"cannot normalize estimate with norm {n}")
        self.time /= n
        self.refresh_specs()

    def copy(self) -> "TrfEstimate":
        return TrfEstimate(time=self.time.copy(), specs=self.specs.copy(),
                           plan=self.plan, active_blocks=self.active_blocks)


@dataclass(frozen=True)
class BlockedFrame:
    """Blocked RF data with precomputed block spectra.

    ``blocks`` holds P blocks per channel; P equals the plan's B for
    measured data, or B + 1 when an estimated missing block is appended.
    """

    blocks: np.ndarray  # (M, P, L_b)
    specs: np.ndarray   # (M, P, 2*L_b - 1) complex
    plan: sc.BlockPlan

    @classmethod
    def from_frame(cls, frame: sc.RfFrame, plan: sc.BlockPlan) -> "BlockedFrame":
        rows = [sc.block_decompose(ch, plan).blocks for ch in frame.samples]
        blocks = np.ascontiguousarray(rows)
        return cls(blocks=blocks, specs=sc.fft(blocks, n=plan.spectrum_len),
                   plan=plan)

    @property
    def M(self) -> int:
        return self.blocks.shape[0]

    @property
    def num_blocks(self) -> int:
        return self.blocks.shape[1]

    def extended(self, tail_blocks: np.ndarray) -> "BlockedFrame":
        """Append one estimated block per channel (data block B + 1).

        Measured-block spectra are reused untouched so a refinement run with
        the tail weighted to zero reproduces the plain solver exactly.
        """
        t = np.asarray(tail_blocks, dtype=np.float64)
        if t.shape != (self.M, self.plan.L_b):
            raise ValueError(
                f"tail shape {t.shape} does not match (M, L_b) = "
                f"({self.M}, {self.plan.L_b})"
            )
        blocks = np.concatenate([self.blocks, t[:, None, :]], axis=1)
        tail_specs = sc.fft(t[:, None, :], n=self.plan.spectrum_len)
        specs = np.concatenate([self.specs, tail_specs], axis=1)
        return BlockedFrame(blocks=blocks, specs=specs, plan=self.plan)


def as_blocked(frame, plan: sc.BlockPlan) -> BlockedFrame:
    if isinstance(frame, BlockedFrame):
        if frame.plan != plan:
            raise ValueError("blocked frame plan mismatch")
        return frame
    return BlockedFrame.from_frame(frame, plan)


@dataclass(frozen=True)
class IterationRecord:
    """One solver iteration: cost, step, coupling and optional NPM."""

    block: int
    iteration: int
    cost: float
    mu: float
    psi: float
    npm: Optional[float] = None
    phase: str = "bmcflms"

    def __post_init__(self):
        if not (math.isfinite(self.cost) and math.isfinite(self.mu)
                and math.isfinite(self.psi)):
            raise ValueError("iteration record fields must be finite")
        if self.phase == "bmcflms" and self.cost < 0:
            raise ValueError(f"crossrelation cost must be >= 0, got {self.cost}")


# ---------------------------------------------------------------------------
# Frequency-domain kernels.
#
# With F1/F2 the DFT matrices of sizes L_b and N2 = 2*L_b - 1, the operators
# B = F1 A2 F2^-1 and B1 = F1 A1 F2^-1 reduce to index maps:
#   B^H  (F1 v) = (L_b / N2) * fft(pad_N2(v))
#   B1^H (F1 v) = (L_b / N2) * fft(shift_pad_N2(v))
# for any length-L_b time block v, where shift_pad places v[0..L_b-2] at
# positions L_b..N2-1.
# ---------------------------------------------------------------------------

def _bh_f1(err_time: np.ndarray, L_b: int) -> np.ndarray:
    n2 = 2 * L_b - 1
    return (L_b / n2) * sc.fft(err_time, n=n2)


def _b1h_f1(err_time: np.ndarray, L_b: int) -> np.ndarray:
    n2 = 2 * L_b - 1
    buf = np.zeros(err_time.shape[:-1] + (n2,), dtype=np.complex128)
    buf[..., L_b:] = err_time[..., : L_b - 1]
    return (L_b / n2) * sc.fft(buf)


def _pair_error_time(xs: np.ndarray, hs: np.ndarray, b: int,
                     L_b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """b-th block crossrelation errors for all channel pairs i < j.

    Parameters are raw spectra stacks: ``xs`` (M, P, N2) data block spectra
    and ``hs`` (M, B, N2) TRF block spectra. Returns ``(iu, ju, E)`` where
    ``E[(n)]`` is the (complex) time-domain error block of pair
    ``(iu[n], ju[n])``. For conjugate-symmetric inputs E is real up to
    rounding; it is kept complex so the same path serves the gradient
    finite-difference checks over arbitrary spectra.
    """
    M, _, n2 = xs.shape
    iu, ju = np.triu_indices(M, 1)
    p2 = np.zeros((M, M, n2), dtype=np.complex128)
    for p in range(1, b + 1):
        p2 += xs[:, p - 1, :][:, None, :] * hs[:, b - p, :][None, :, :]
    d2 = p2 - p2.transpose(1, 0, 2)
    E = sc.a2_lastaxis(sc.ifft(d2[iu, ju]), L_b)
    if b > 1:
        p1 = np.zeros((M, M, n2), dtype=np.complex128)
        for p in range(1, b):
            p1 += xs[:, p - 1, :][:, None, :] * hs[:, b - p - 1, :][None, :, :]
        d1 = p1 - p1.transpose(1, 0, 2)
        E = E + sc.a1_lastaxis(sc.ifft(d1[iu, ju]), L_b)
    return iu, ju, E


def _pair_error_time_tail(xs: np.ndarray, hs: np.ndarray,
                          L_b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(B+1)-th block errors; requires xs with B + 1 data blocks."""
    M, P, n2 = xs.shape
    B = hs.shape[1]
    if P != B + 1:
        raise InvalidStateError(
            f"tail error needs B+1={B + 1} data blocks, frame has {P}"
        )
    iu, ju = np.triu_indices(M, 1)
    p1 = np.zeros((M, M, n2), dtype=np.complex128)
    for p in range(1, B + 1):
        p1 += xs[:, p - 1, :][:, None, :] * hs[:, B - p, :][None, :, :]
    d1 = p1 - p1.transpose(1, 0, 2)
    p2 = np.zeros((M, M, n2), dtype=np.complex128)
    for p in range(2, B + 2):
        p2 += xs[:, p - 1, :][:, None, :] * hs[:, B - p + 1, :][None, :, :]
    d2 = p2 - p2.transpose(1, 0, 2)
    E = sc.a2_lastaxis(sc.ifft(d2[iu, ju]), L_b) \
        + sc.a1_lastaxis(sc.ifft(d1[iu, ju]), L_b)
    return iu, ju, E


def _cost_from_pair_errors(E: np.ndarray, L_b: int) -> float:
    # J = sum_{i<j} ||F1 e~_ij||^2 = L_b * sum_{i<j} ||e~_ij||^2 (Parseval).
    return float(L_b * np.sum(np.abs(E) ** 2))


def _full_antisym(iu, ju, vals: np.ndarray, M: int) -> np.ndarray:
    S = np.zeros((M, M) + vals.shape[1:], dtype=vals.dtype)
    S[iu, ju] = vals
    S[ju, iu] = -vals
    return S


def _grad_stacks(E: np.ndarray, iu, ju, M: int, L_b: int,
                 need_b1: bool) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Full antisymmetric B^H / B1^H maps of the pair errors."""
    S = _full_antisym(iu, ju, _bh_f1(E, L_b), M)
    S1 = _full_antisym(iu, ju, _b1h_f1(E, L_b), M) if need_b1 else None
    return S, S1


def _correlation_time(xs: np.ndarray, hs: np.ndarray, b: int,
                      L_b: int) -> np.ndarray:
    """b-th block of x_i * h_i per channel, shape (M, L_b)."""
    seg2 = np.zeros((xs.shape[0], xs.shape[2]), dtype=np.complex128)
    for p in range(1, b + 1):
        seg2 += xs[:, p - 1, :] * hs[:, b - p, :]
    r = sc.a2_lastaxis(sc.ifft(seg2), L_b)
    if b > 1:
        seg1 = np.zeros_like(seg2)
        for p in range(1, b):
            seg1 += xs[:, p - 1, :] * hs[:, b - p - 1, :]
        r = r + sc.a1_lastaxis(sc.ifft(seg1), L_b)
    return r


# ---------------------------------------------------------------------------
# Public per-pair operations (contract surface; the run loop uses the
# vectorized kernels above, which the test suite checks against these).
# ---------------------------------------------------------------------------

def error_component(blocked_frame: BlockedFrame, h_est: TrfEstimate,
                    i: int, j: int, p: int, q: int) -> np.ndarray:
    """Spectrum of the (p, q) crossrelation error component of pair (i, j).

    ``e_ij^{pq} = x_i^p * h^_j^q - x_j^p * h^_i^q`` evaluated as a product of
    length ``2*L_b - 1`` spectra. Block indices p, q are 1-based.
    """
    if not 1 <= p <= blocked_frame.num_blocks:
        raise ValueError(f"data block {p} out of range 1..{blocked_frame.num_blocks}")
    if not 1 <= q <= h_est.active_blocks:
        raise ValueError(f"TRF block {q} out of range 1..{h_est.active_blocks}")
    xs, hs = blocked_frame.specs, h_est.specs
    return xs[i, p - 1] * hs[j, q - 1] - xs[j, p - 1] * hs[i, q - 1]


def assemble_error_block(components: Mapping[tuple[int, int], np.ndarray],
                         b: int, plan: sc.BlockPlan) -> np.ndarray:
    """Assemble the b-th block error from its (p, q) component spectra.

    ``components`` maps 1-based ``(p, q)`` to the component spectrum from
    :func:`error_component`. Returns the length-``L_b`` transform of the
    block error. A missing component raises :class:`InvalidStateError`.
    """
    L_b = plan.L_b
    total = np.zeros(L_b, dtype=np.complex128)
    for p in range(1, b + 1):
        try:
            c2 = components[(p, b - p + 1)]
        except KeyError as exc:
            raise InvalidStateError(f"missing error component (p={p}, q={b - p + 1})") from exc
        total = total + sc.a2_lastaxis(sc.ifft(np.asarray(c2)), L_b)
    for p in range(1, b):
        try:
            c1 = components[(p, b - p)]
        except KeyError as exc:
            raise InvalidStateError(f"missing error component (p={p}, q={b - p})") from exc
        total = total + sc.a1_lastaxis(sc.ifft(np.asarray(c1)), L_b)
    return sc.fft(total)


def error_block(blocked_frame: BlockedFrame, h_est: TrfEstimate,
                i: int, j: int, b: int) -> np.ndarray:
    """Convenience: compute and assemble all components of pair (i, j)."""
    comps = {}
    for p in range(1, b + 1):
        comps[(p, b - p + 1)] = error_component(blocked_frame, h_est, i, j, p, b - p + 1)
        if p < b:
            comps[(p, b - p)] = error_component(blocked_frame, h_est, i, j, p, b - p)
    return assemble_error_block(comps, b, blocked_frame.plan)


def cost_Jb(h_est: TrfEstimate, frame, b: int) -> float:
    """Crossrelation cost of block b summed over all channel pairs."""
    bf = as_blocked(frame, h_est.plan)
    _, _, E = _pair_error_time(bf.specs, h_est.specs, b, h_est.plan.L_b)
    return _cost_from_pair_errors(E, h_est.plan.L_b)


def grad_Jb_block_b(h_est: TrfEstimate, frame, b: int, k: int) -> np.ndarray:
    """Gradient of the block-b cost w.r.t. the conjugate spectrum of
    channel k's block-b TRF. Minus this vector is a descent direction."""
    bf = as_blocked(frame, h_est.plan)
    L_b = h_est.plan.L_b
    iu, ju, E = _pair_error_time(bf.specs, h_est.specs, b, L_b)
    S, _ = _grad_stacks(E, iu, ju, h_est.M, L_b, need_b1=False)
    return np.einsum("if,if->f", np.conj(bf.specs[:, 0, :]), S[:, k, :])


def grad_Jb_block_q(h_est: TrfEstimate, frame, b: int, q: int, k: int) -> np.ndarray:
    """Gradient of the block-b cost w.r.t. channel k's earlier block q < b."""
    if not 1 <= q < b:
        raise ValueError(f"q must satisfy 1 <= q < b, got q={q}, b={b}")
    bf = as_blocked(frame, h_est.plan)
    L_b = h_est.plan.L_b
    iu, ju, E = _pair_error_time(bf.specs, h_est.specs, b, L_b)
    S, S1 = _grad_stacks(E, iu, ju, h_est.M, L_b, need_b1=True)
    xs = bf.specs
    return (np.einsum("if,if->f", np.conj(xs[:, b - q - 1, :]), S1[:, k, :])
            + np.einsum("if,if->f", np.conj(xs[:, b - q, :]), S[:, k, :]))


def variable_step_size(h_stack: np.ndarray,
                       grad_stack: np.ndarray) -> tuple[float, bool]:
    """Projection step size ``mu = Re(<h, grad>) / ||grad||^2``.

    Both stacks cover blocks ``1..b`` of all channels in matching order.
    The pairing is Hermitian: on spectra of real signals it equals the
    time-domain inner product (times the transform length), which is the
    geometry the projection rule is derived in. Returns
    ``(mu, converged)``; a squared gradient norm below ``GRAD_NORM_FLOOR``
    yields ``(0.0, True)``.
    """
    g2 = float(np.sum(np.abs(grad_stack) ** 2))
    if g2 < GRAD_NORM_FLOOR:
        return 0.0, True
    num = float(np.real(np.vdot(h_stack, grad_stack)))
    return num / g2, False


def update_and_normalize(h_est: TrfEstimate, grad_b: np.ndarray, mu: float,
                         b: int) -> TrfEstimate:
    """Gradient step on block b, time-support projection, renormalization.

    The block-b spectra take the step ``-mu * grad_b``; the first ``L_b``
    time samples of the result are kept (support projection) and all active
    blocks are jointly rescaled to unit time-domain norm. Mutates ``h_est``
    and returns it.
    """
    if not math.isfinite(mu):
        raise NumericalError(f"non-finite step size {mu}")
    L_b = h_est.plan.L_b
    new_spec = h_est.specs[:, b - 1, :] - mu * grad_b
    t = sc.real_ifft(new_spec)[:, :L_b]
    if not np.all(np.isfinite(t)):
        raise NumericalError(f"non-finite coefficients after block-{b} update")
    h_est.time[:, b - 1, :] = t
    h_est.normalize_active()
    return h_est


# ---------------------------------------------------------------------------
# Run loop (shared by the crossrelation-only and missing-data solvers).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _MdTerms:
    """Extras for the missing-data phase: tail-block error weighting.

    The update direction divides the composite cost's gradient by alpha1,
    which the projection step size cancels exactly; with ``alpha2 = 0`` and
    the constraint off the iteration is then identical to the plain solver.
    """

    alpha1: float
    alpha2: float


def _coupling(J: float, xi: float, rho: float, gamma: float) -> float:
    # Solver-side variant: clamps J away from zero instead of erroring.
    J = max(J, 1e-300)
    return xi * abs(rho * math.log10(J)) ** gamma


def _solve_blocks(bf: BlockedFrame, h: TrfEstimate, config, constraint,
                  truth: Optional[np.ndarray], phase: str,
                  md: Optional[_MdTerms]) -> list[IterationRecord]:
    plan = h.plan
    L_b, B, M = plan.L_b, plan.B, h.M
    xs = bf.specs
    xi = 0.0 if constraint is None else constraint.xi
    records: list[IterationRecord] = []

    truth_blocks = None
    if truth is not None:
        t = np.asarray(truth, dtype=np.float64)
        if t.shape[0] != M or t.shape[1] < B * L_b:
            raise ValueError(
                f"truth shape {t.shape} incompatible with (M, >= B*L_b) = ({M}, {B * L_b})"
            )
        truth_blocks = t[:, : B * L_b].reshape(M, B, L_b)

    for b in range(1, B + 1):
        if phase == "bmcflms":
            h.active_blocks = b
        costs: list[float] = []
        for m in range(1, config.max_iters + 1):
            iu, ju, E = _pair_error_time(xs, h.specs, b, L_b)
            J = _cost_from_pair_errors(E, L_b)
            psi = _coupling(J, xi, constraint.rho, constraint.gamma) if xi > 0 else 0.0

            need_b1 = b > 1
            S, S1 = _grad_stacks(E, iu, ju, M, L_b, need_b1)
            cx = np.conj(xs)

            Sm = S1m = None
            J_tail = 0.0
            if md is not None:
                _, _, Em = _pair_error_time_tail(xs, h.specs, L_b)
                J_tail = _cost_from_pair_errors(Em, L_b)
                Sm = _full_antisym(iu, ju, _bh_f1(Em, L_b), M)
                S1m = _full_antisym(iu, ju, _b1h_f1(Em, L_b), M)

            r = Sc = Sc1 = None
            J_corr = 0.0
            if psi > 0.0:
                r = _correlation_time(xs, h.specs, b, L_b)
                J_corr = float(L_b * np.sum(np.abs(r) ** 2))
                Sc = _bh_f1(r, L_b)
                if need_b1:
                    Sc1 = _b1h_f1(r, L_b)

            # Update direction for blocks 1..b.  In the md phase the
            # composite gradient is divided by alpha1 (scale cancels in the
            # step size); psi_eff keeps the paper's relative weighting.
            if md is not None:
                tail_w = md.alpha2 / md.alpha1
                psi_eff = psi / md.alpha1
                cost_logged = md.alpha1 * J + md.alpha2 * J_tail - psi * J_corr
            else:
                tail_w = 0.0
                psi_eff = psi
                cost_logged = J

            grads = np.empty((b, M, plan.spectrum_len), dtype=np.complex128)
            for beta in range(1, b + 1):
                if beta == b:
                    g = np.einsum("if,ikf->kf", cx[:, 0, :], S)
                else:
                    g = (np.einsum("if,ikf->kf", cx[:, b - beta - 1, :], S1)
                         + np.einsum("if,ikf->kf", cx[:, b - beta, :], S))
                if md is not None:
                    g = g + tail_w * (
                        np.einsum("if,ikf->kf", cx[:, B - beta, :], S1m)
                        + np.einsum("if,ikf->kf", cx[:, B - beta + 1, :], Sm))
                if psi > 0.0:
                    if beta == b:
                        g[...] -= psi_eff * (cx[:, 0, :] * Sc)
                    else:
                        g[...] -= psi_eff * (cx[:, b - beta - 1, :] * Sc1
                                             + cx[:, b - beta, :] * Sc)
                grads[beta - 1] = g

            h_stack = h.specs[:, :b, :].transpose(1, 0, 2)
            mu, converged = variable_step_size(h_stack, grads)

            npm_db = None
            if not converged:
                try:
                    update_and_normalize(h, grads[b - 1], mu, b)
                except NumericalError as exc:
                    raise NumericalError(
                        f"{phase} failed at block {b}, iteration {m}: {exc}"
                    ) from exc
            if truth_blocks is not None:
                a = h.active_blocks
                npm_db = npm(truth_blocks[:, :a, :].ravel(),
                             h.time[:, :a, :].ravel()).value
            records.append(IterationRecord(block=b, iteration=m,
                                           cost=cost_logged, mu=mu, psi=psi,
                                           npm=npm_db, phase=phase))
            if converged:
                break
            costs.append(cost_logged)
            if config.tol > 0 and len(costs) > PLATEAU_SPAN:
                ref = costs[-1 - PLATEAU_SPAN]
                rel = abs(costs[-1] - ref) / max(abs(ref), 1e-300)
                if rel < config.tol:
                    break
    return records


def run_bmcflms(frame: sc.RfFrame, config, constraint=None,
                truth: Optional[np.ndarray] = None
                ) -> tuple[TrfEstimate, list[IterationRecord]]:
    """Estimate all TRF blocks sequentially from an RF frame.

    Parameters
    ----------
    frame : RfFrame
        Measured (truncated) RF data, M >= 2 channels.
    config : SolverConfig
        Block count, iteration caps, tolerances and constraint parameters.
    constraint : ConstraintParams, optional
        Correlation-energy constraint. Defaults to the config's
        ``xi/rho/gamma``; ``xi = 0`` disables the constraint entirely.
    truth : (M, L) ndarray, optional
        True TRFs; when given, every iteration record carries the NPM of
        the active-block estimate against the matching truth slice.

    Returns
    -------
    (TrfEstimate, list[IterationRecord])
    """
    from .constraint import ConstraintParams  # noqa: PLC0415 (cycle)

    config.validate()
    if frame.M < 2:
        raise ValueError("crossrelation needs at least 2 channels")
    if constraint is None:
        constraint = ConstraintParams(xi=config.xi, rho=config.rho,
                                      gamma=config.gamma)
    plan = sc.BlockPlan.for_signal(frame.L, config.B)
    bf = BlockedFrame.from_frame(frame, plan)
    h = TrfEstimate.initial(frame.M, plan)
    records = _solve_blocks(bf, h, config, constraint, truth,
                            phase="bmcflms", md=None)
    return h, records
