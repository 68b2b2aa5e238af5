"""Barrier-Newton solver for the relaxed covariance subproblem.

One linearization step of the inner beamformer optimization minimizes

    f(W) = -sum_{m,k} log2( total_{m,k}(W) ) + sum_{m,k} <C_{m,k}, W_{m,k}>

over Hermitian PSD blocks ``W_{m,k}`` subject to the per-cell budget
``sum_k Tr(A_m W_{m,k}) <= P``.  ``total_{m,k}`` is the affine
signal-plus-interference-plus-noise power of user (m, k) and ``C_{m,k}`` is
the PSD linearization of the interference penalty (zero on the first call).

The problem couples M*K Hermitian K x K blocks; at the intended scale
(K <= 4) a dense log-barrier Newton method over the real parametrization of
the blocks is both simpler and tighter than a generic conic solver.  The
barrier parameter grows geometrically until the duality gap implied by the
barrier (sum of cone degrees divided by t) is below ``gap_target``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

LN2 = math.log(2.0)


class SubproblemError(RuntimeError):
    "Raised when Newton centering fails to converge; carries the residual report."

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


def hermitian_basis(k: int) -> np.ndarray:
    """Orthonormal basis of Hermitian k x k matrices, shape (k*k, k, k).

    Ordered as the k diagonal units followed by the symmetric and
    antisymmetric pair combinations; orthonormal under Re tr(A^H B).
    """
    mats = []
    for p in range(k):
        e = np.zeros((k, k), dtype=complex)
        e[p, p] = 1.0
        mats.append(e)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for p in range(k):
        for q in range(p + 1, k):
            s = np.zeros((k, k), dtype=complex)
            s[p, q] = inv_sqrt2
            s[q, p] = inv_sqrt2
            mats.append(s)
            a = np.zeros((k, k), dtype=complex)
            a[p, q] = 1j * inv_sqrt2
            a[q, p] = -1j * inv_sqrt2
            mats.append(a)
    return np.stack(mats)


def _coef(basis: np.ndarray, mat: np.ndarray) -> np.ndarray:
    "Coefficients Re tr(mat @ B_a) of a Hermitian matrix in the basis."
    return np.einsum("aij,ji->a", basis, mat).real


def _blocks_to_theta(w: np.ndarray, basis: np.ndarray) -> np.ndarray:
    "Stack (M, K, K, K) Hermitian blocks into the real parameter vector."
    m_cells, k_users = w.shape[0], w.shape[1]
    return np.concatenate(
        [_coef(basis, w[m, k]) for m in range(m_cells) for k in range(k_users)]
    )


def _theta_to_blocks(theta: np.ndarray, basis: np.ndarray, m_cells: int, k_users: int) -> np.ndarray:
    kk = basis.shape[0]
    w = np.empty((m_cells, k_users, basis.shape[1], basis.shape[2]), dtype=complex)
    for m in range(m_cells):
        for k in range(k_users):
            sl = theta[(m * k_users + k) * kk : (m * k_users + k + 1) * kk]
            w[m, k] = np.einsum("a,aij->ij", sl, basis)
    return w


@dataclass
class SubproblemSolution:
    "Optimal covariances with the achieved objective and KKT residual report."

    covariances: np.ndarray
    objective: float
    residuals: dict
    newton_steps: int
    barrier_t: float


def user_totals(heff, noise_power, w) -> np.ndarray:
    """Affine user powers total_{m,k}: signal + all interference + noise."""
    m_cells, _, k_users, _ = heff.shape
    # quad[i, m, k] = sum_j h^H_{i,m,k} W_{i,j} h_{i,m,k}
    quad = np.einsum("imka,ijab,imkb->imk", heff.conj(), w, heff).real
    noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (m_cells, k_users))
    return quad.sum(axis=0) + noise


def subproblem_objective(heff, linear_coeffs, noise_power, w) -> float:
    """Canonical objective value of a covariance set (feasibility not checked)."""
    total = user_totals(heff, noise_power, w)
    value = -np.sum(np.log2(total))
    if linear_coeffs is not None:
        value += np.einsum("mkij,mkji->", linear_coeffs, w).real
    return float(value)


class _BarrierProblem:
    """Precomputed affine structure of one subproblem instance."""

    def __init__(self, heff, linear_coeffs, analog_gram, power_budget, noise_power):
        self.m_cells, _, self.k_users, _ = heff.shape
        m_cells, k_users = self.m_cells, self.k_users
        self.kk = k_users * k_users
        self.dim = m_cells * k_users * self.kk
        self.basis = hermitian_basis(k_users)
        self.power_budget = float(power_budget)
        self.noise = np.broadcast_to(np.asarray(noise_power, dtype=float), (m_cells, k_users))

        # Scaled quadratic coefficients: hv[i, m, k] holds the basis
        # coefficients of h h^H / sigma^2_{m,k} for the channel from cell i.
        hv = np.einsum("imka,bac,imkc->imkb", heff.conj(), self.basis, heff).real
        hv = hv / self.noise[None, :, :, None]

        # total'_{m,k}(theta) = ct[m, k] . theta + 1
        self.ct = np.zeros((m_cells, k_users, self.dim))
        for m in range(m_cells):
            for k in range(k_users):
                for p in range(m_cells):
                    coef = hv[p, m, k]
                    for q in range(k_users):
                        self.ct[m, k, self._sl(p, q)] = coef
        self.ct_flat = self.ct.reshape(m_cells * k_users, self.dim)

        # Linear objective coefficients (bits units).
        self.lin = np.zeros(self.dim)
        if linear_coeffs is not None:
            for m in range(m_cells):
                for k in range(k_users):
                    self.lin[self._sl(m, k)] = _coef(self.basis, linear_coeffs[m, k])

        # Per-cell power rows: pvec[m] . theta <= P.
        self.pvec = np.zeros((m_cells, self.dim))
        for m in range(m_cells):
            coef = _coef(self.basis, analog_gram[m])
            for k in range(k_users):
                self.pvec[m, self._sl(m, k)] = coef

        # Sum of barrier cone degrees: K per PSD block plus 1 per budget.
        self.degree = m_cells * k_users * k_users + m_cells
        # Constant offset between the scaled internal objective and the
        # canonical one: -sum log2 sigma^2.
        self.offset = -float(np.sum(np.log2(self.noise)))

        # Per-block data for the W^(1/2)-scaled Newton direction.  Blocks
        # are indexed b = m * K + q; guser[u, b] is the (noise-scaled) outer
        # product governing how block b enters user u's total power.
        n_blocks = m_cells * k_users
        n_users = m_cells * k_users
        self.block_cell = np.repeat(np.arange(m_cells), k_users)
        hq = np.einsum("imka,imkb->imkab", heff, heff.conj())
        hq = hq / self.noise[None, :, :, None, None]
        self.guser = np.empty((n_users, n_blocks, k_users, k_users), dtype=complex)
        for u in range(n_users):
            m, _ = divmod(u, k_users)
            for b in range(n_blocks):
                p = self.block_cell[b]
                self.guser[u, b] = hq[p, m, u % k_users]
        self.a_block = np.stack([np.asarray(analog_gram[p], dtype=complex) for p in self.block_cell])
        if linear_coeffs is not None:
            self.c_block = np.stack(
                [np.asarray(linear_coeffs[b // k_users, b % k_users], dtype=complex) for b in range(n_blocks)]
            )
        else:
            self.c_block = np.zeros((n_blocks, k_users, k_users), dtype=complex)
        self.ac_stack = np.stack([self.a_block, self.c_block])
        # Gradient of -log det in the scaled space is -tr(B_a): -1 on the
        # diagonal basis coefficients of every block.
        self.scaled_logdet_grad = np.zeros(self.dim)
        for b in range(n_blocks):
            self.scaled_logdet_grad[b * self.kk : b * self.kk + k_users] = -1.0

    def _sl(self, m, k):
        return slice((m * self.k_users + k) * self.kk, (m * self.k_users + k + 1) * self.kk)

    def blocks(self, theta):
        return _theta_to_blocks(theta, self.basis, self.m_cells, self.k_users)

    def totals(self, theta):
        return self.ct_flat @ theta + 1.0

    def slacks(self, theta):
        return self.power_budget - self.pvec @ theta

    def blocks_positive(self, theta):
        "True when every covariance block reconstructed from theta is PD."
        w = self.blocks(theta)
        for m in range(self.m_cells):
            for k in range(self.k_users):
                try:
                    np.linalg.cholesky(w[m, k])
                except np.linalg.LinAlgError:
                    return False
        return True

    def scaled_newton_step(self, theta, totals, slack, t):
        """Newton direction computed in the per-block W^(1/2)-scaled space.

        Congruence by the matrix square root turns the log-det barrier
        Hessian into the identity, so the linear system stays well
        conditioned even when the optimum has nearly rank-deficient blocks
        (the expected relaxation-tight structure).  Returns the step in the
        raw parametrization, the Newton decrement squared, and the per-block
        step spectra consumed by the line search.
        """
        k = self.k_users
        n_blocks = self.m_cells * k
        wb = self.blocks(theta).reshape(n_blocks, k, k)
        evals, evecs = np.linalg.eigh(wb)
        evals = np.maximum(evals, 1e-300)
        sqrt_w = evecs * np.sqrt(evals)[:, None, :] @ np.conj(np.swapaxes(evecs, 1, 2))

        ht = np.einsum("bij,ubjk,bkl->ubil", sqrt_w, self.guser, sqrt_w)
        ct_v = np.einsum("xij,ubji->ubx", self.basis, ht).real.reshape(len(totals), self.dim)
        act = np.einsum("bij,cbjk,bkl->cbil", sqrt_w, self.ac_stack, sqrt_w)
        acv = np.einsum("xij,cbji->cbx", self.basis, act).real
        pvec_v = np.zeros((self.m_cells, n_blocks, self.kk))
        pvec_v[self.block_cell, np.arange(n_blocks)] = acv[0]
        pvec_v = pvec_v.reshape(self.m_cells, self.dim)
        lin_v = acv[1].reshape(self.dim)

        scaled = ct_v / totals[:, None]
        budget_cols = (pvec_v / slack[:, None]).T  # (dim, M)
        grad_v = t * (-scaled.sum(axis=0) / LN2 + lin_v)
        grad_v += self.scaled_logdet_grad
        grad_v += budget_cols.sum(axis=1)
        # In the scaled space the Hessian is exactly I + U U^T with one
        # column per user log term and one per power barrier.  Solving the
        # equivalent augmented quasi-definite system, whose leading block is
        # the identity, is conditioned by ||U|| rather than ||U||^2, which
        # is what keeps the final centering stages (huge t, nearly active
        # constraints) numerically honest.
        u_cols = np.concatenate([math.sqrt(t / LN2) * scaled.T, budget_cols], axis=1)
        n_low = u_cols.shape[1]
        n_aug = self.dim + n_low
        aug = np.zeros((n_aug, n_aug))
        aug[: self.dim, : self.dim] = np.eye(self.dim)
        aug[: self.dim, self.dim :] = u_cols
        aug[self.dim :, : self.dim] = u_cols.T
        aug[self.dim :, self.dim :] = -np.eye(n_low)
        rhs = np.zeros(n_aug)
        rhs[: self.dim] = -grad_v
        lu, piv = scipy.linalg.lu_factor(aug)
        sol = scipy.linalg.lu_solve((lu, piv), rhs)
        for _ in range(2):  # iterative refinement recovers trailing digits
            sol = sol + scipy.linalg.lu_solve((lu, piv), rhs - aug @ sol)
        step_v = sol[: self.dim]
        decrement_sq = float(-grad_v @ step_v)

        v_mats = np.einsum("bx,xij->bij", step_v.reshape(n_blocks, self.kk), self.basis)
        v_mats = 0.5 * (v_mats + np.conj(np.swapaxes(v_mats, 1, 2)))
        dw = np.einsum("bij,bjk,bkl->bil", sqrt_w, v_mats, sqrt_w)
        step_theta = np.einsum("xij,bji->bx", self.basis, dw).real.reshape(self.dim)
        # W + alpha dW = S (I + alpha V) S, so the line-search domain and
        # log-det change follow exactly from the eigenvalues of V; no
        # inversion of the (possibly nearly singular) W is involved.
        spectra = np.linalg.eigvalsh(v_mats)
        return step_theta, decrement_sq, spectra

    def centered_delta(self, totals, slack, d_totals, d_slack, spectra, lin_step, alpha, t):
        """Exact change of t*objective + barrier along ``alpha * step``.

        Formulated entirely through log1p of relative changes so the test
        stays meaningful when the centered value itself is ~1e9 and the
        expected decrease is ~1e-6 (a plain value difference would be
        rounding noise there).  Returns +inf outside the domain.
        """
        ratio_t = alpha * d_totals / totals
        ratio_s = alpha * d_slack / slack
        scaled = alpha * spectra
        if np.any(ratio_t <= -1.0) or np.any(ratio_s <= -1.0) or np.any(scaled <= -1.0):
            return np.inf
        delta = -t / LN2 * np.sum(np.log1p(ratio_t)) + t * alpha * lin_step
        delta -= np.sum(np.log1p(ratio_s))
        delta -= np.sum(np.log1p(scaled))
        return delta

    def kkt_certificate(self, w, totals, slack, t):
        """KKT residual report from barrier-constructed dual certificates.

        The budget multipliers are ``lambda_m = 1 / (t s_m)`` and the PSD
        multipliers are defined through the stationarity condition itself,
        ``Z_{m,k} = grad_f_{m,k} + lambda_m A_m``, so stationarity holds to
        rounding and the optimality content sits in dual feasibility
        (``Z`` PSD), complementarity, and the certified duality gap
        ``sum <Z, W> + sum lambda_m s_m`` (an upper bound on the achieved
        suboptimality by weak duality).
        """
        k_users = self.k_users
        lam = 1.0 / (t * slack)
        # grad_f per cell: -(1/ln2) sum_{m,k} (h h^H / sigma^2) / total'.
        weights = 1.0 / totals.reshape(self.m_cells, k_users)
        grad_cell = np.empty((self.m_cells, k_users, k_users), dtype=complex)
        for p in range(self.m_cells):
            acc = np.zeros((k_users, k_users), dtype=complex)
            for m in range(self.m_cells):
                for k in range(k_users):
                    acc += self.guser[m * k_users + k, p * k_users] * weights[m, k]
            grad_cell[p] = -acc / LN2
        stationarity = 0.0
        dual_infeasibility = max(0.0, float(-lam.min()))
        complementarity = float(np.max(lam * slack))
        gap = float(np.sum(lam * slack))
        a_mats = self.a_block.reshape(self.m_cells, k_users, k_users, k_users)[:, 0]
        c_mats = self.c_block.reshape(self.m_cells, k_users, k_users, k_users)
        for m in range(self.m_cells):
            for k in range(k_users):
                z = grad_cell[m] + c_mats[m, k] + lam[m] * a_mats[m]
                z = 0.5 * (z + z.conj().T)
                resid = grad_cell[m] + c_mats[m, k] + lam[m] * a_mats[m] - z
                stationarity = max(stationarity, float(np.max(np.abs(resid))))
                dual_infeasibility = max(
                    dual_infeasibility, max(0.0, float(-np.linalg.eigvalsh(z)[0]))
                )
                comp = abs(float(np.trace(z @ w[m, k]).real))
                complementarity = max(complementarity, comp)
                gap += comp
        min_eig = min(
            float(np.linalg.eigvalsh(w[m, k])[0])
            for m in range(self.m_cells)
            for k in range(k_users)
        )
        return {
            "stationarity": stationarity,
            "dual_infeasibility": dual_infeasibility,
            "complementarity": complementarity,
            "duality_gap": gap,
            "min_eigenvalue": min_eig,
            "power_violation": float(max(0.0, -slack.min())),
        }

    def interior_point(self):
        "Strictly feasible starting blocks: small multiples of the identity."
        k = self.k_users
        theta = np.zeros(self.dim)
        for m in range(self.m_cells):
            # First k basis coefficients of a block are its diagonal entries.
            tr_a = self.pvec[m, self._sl(m, 0)][:k].sum()
            alpha = self.power_budget / (2.0 * self.k_users * max(tr_a, 1e-300))
            for q in range(self.k_users):
                start = (m * self.k_users + q) * self.kk
                theta[start : start + k] = alpha
        return theta


def solve_relaxed_subproblem(
    heff,
    linear_coeffs,
    analog_gram,
    power_budget,
    noise_power,
    *,
    initial=None,
    newton_tol: float = 1e-8,
    gap_target: float = 5e-7,
    barrier_factor: float = 10.0,
    t_init: float = 1.0,
    max_newton: int = 200,
) -> SubproblemSolution:
    """Solve one convex covariance subproblem to high accuracy.

    Parameters
    ----------
    heff : complex (M, M, K, K)
        Effective channels; ``heff[i, m, k]`` is seen by user (m, k) from
        cell i's array.
    linear_coeffs : complex (M, K, K, K) or None
        PSD penalty matrices ``C_{m,k}`` (bits units); None means zero.
    analog_gram : complex (M, K, K)
        Per-cell Gram matrices of the analog stage.
    power_budget : float
        Per-cell trace budget P.
    noise_power : float or (M, K)
        Receiver noise powers.
    initial : (M, K, K, K) or None
        Warm-start covariances; blended toward the analytic interior point
        so the barrier starts strictly feasible.

    Returns
    -------
    SubproblemSolution
        Covariances within ``gap_target`` of the optimum, the canonical
        objective value, and the KKT residual report.

    Raises
    ------
    SubproblemError
        When centering genuinely fails: the decrement is still large after
        the retry budget and no acceptable certificate was reached.
    """
    prob = _BarrierProblem(heff, linear_coeffs, analog_gram, power_budget, noise_power)
    theta = prob.interior_point()
    if initial is not None:
        warm = _blocks_to_theta(np.asarray(initial, dtype=complex), prob.basis)
        # Shrink into the budget if the warm start overshoots, then blend
        # toward the analytic interior point so the barrier starts strictly
        # feasible.
        used = prob.pvec @ warm
        scale = 1.0
        for u in used:
            if u > prob.power_budget:
                scale = min(scale, prob.power_budget / u)
        cand = 0.9 * scale * warm + 0.1 * theta
        if (
            np.all(prob.totals(cand) > 0)
            and np.all(prob.slacks(cand) > 0)
            and prob.blocks_positive(cand)
        ):
            theta = cand

    t_final = prob.degree / gap_target
    steps = 0
    decrement_sq = np.inf
    attempt = 0
    while True:
        # Affine quantities are tracked incrementally through the ladder.
        totals = prob.totals(theta)
        slack = prob.slacks(theta)
        t = t_init
        while True:
            final_stage = t >= t_final
            best_dec = np.inf
            since_best = 0
            for _ in range(max_newton):
                step, decrement_sq, spectra = prob.scaled_newton_step(theta, totals, slack, t)
                # Intermediate stages only need approximate centering; the
                # final stage is polished much further (quadratic convergence
                # makes this cheap) so the dual certificates are accurate.
                stage_tol = min(newton_tol, 1e-12) if final_stage else max(newton_tol, 1e-6)
                if decrement_sq / 2.0 <= stage_tol:
                    break
                if decrement_sq <= 0:  # numerical floor of the quadratic model
                    break
                # Floor detection: stop polishing once the decrement stalls.
                if decrement_sq < 0.9 * best_dec:
                    best_dec = decrement_sq
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= 8:
                        break
                steps += 1
                d_slack = -(prob.pvec @ step)
                d_totals = prob.ct_flat @ step
                lin_step = float(prob.lin @ step)
                alpha = 1.0
                while alpha > 1e-16:
                    delta = prob.centered_delta(
                        totals, slack, d_totals, d_slack, spectra, lin_step, alpha, t
                    )
                    if delta <= -0.25 * alpha * decrement_sq:
                        break
                    alpha *= 0.5
                if alpha <= 1e-16:
                    break
                theta = theta + alpha * step
                totals = totals + alpha * d_totals
                slack = slack + alpha * d_slack
            if final_stage:
                break
            t = min(t * barrier_factor, t_final)

        w = prob.blocks(theta)
        w = 0.5 * (w + np.conj(np.swapaxes(w, -1, -2)))
        residuals = prob.kkt_certificate(w, totals, slack, t)
        certified = (
            residuals["stationarity"] <= 1e-6
            and residuals["dual_infeasibility"] <= 1e-6
            and residuals["complementarity"] <= 1e-6
            and residuals["min_eigenvalue"] >= -1e-8
            and residuals["power_violation"] <= 1e-6
        )
        if certified or attempt >= 2:
            break
        # Pull back toward the analytic interior point and re-ladder; a
        # fresh path normally escapes the numerical pocket that stalled the
        # previous centering.
        attempt += 1
        theta = 0.9 * theta + 0.1 * prob.interior_point()

    if not certified and decrement_sq / 2.0 > 1e-3:
        raise SubproblemError("Newton centering did not converge", residuals=residuals)
    objective = -np.sum(np.log2(totals)) + prob.lin @ theta + prob.offset
    return SubproblemSolution(
        covariances=w,
        objective=float(objective),
        residuals=residuals,
        newton_steps=steps,
        barrier_t=t,
    )
