import math

import numpy as np
import pytest

from mixedfield.subproblem import (
    hermitian_basis,
    solve_relaxed_subproblem,
    subproblem_objective,
    user_totals,
)

P = 1.0
SIGMA2 = 1e-11


def random_instance(seed, m_cells=2, k_users=3, antenna=129):
    "Synthetic effective channels with dominant serving links, plus PSD penalties."
    rng = np.random.default_rng(seed)
    heff = (
        rng.standard_normal((m_cells, m_cells, k_users, k_users))
        + 1j * rng.standard_normal((m_cells, m_cells, k_users, k_users))
    ) * 1e-3
    for m in range(m_cells):
        heff[m, m] *= 10.0
    gram = np.zeros((m_cells, k_users, k_users), dtype=complex)
    for m in range(m_cells):
        fa = np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, (antenna, k_users)))
        gram[m] = fa.conj().T @ fa
    coeffs = np.zeros((m_cells, k_users, k_users, k_users), dtype=complex)
    for m in range(m_cells):
        for k in range(k_users):
            x = rng.standard_normal((k_users, k_users)) + 1j * rng.standard_normal((k_users, k_users))
            coeffs[m, k] = (x @ x.conj().T) * rng.uniform(0.0, 2e3)
    return heff, coeffs, gram


def random_feasible_point(rng, gram, m_cells, k_users, budget=P):
    w = np.zeros((m_cells, k_users, k_users, k_users), dtype=complex)
    for m in range(m_cells):
        blocks = []
        for _ in range(k_users):
            x = rng.standard_normal((k_users, k_users)) + 1j * rng.standard_normal((k_users, k_users))
            blocks.append(x @ x.conj().T)
        used = sum(np.trace(gram[m] @ b).real for b in blocks)
        scale = rng.uniform(0.0, 1.0) * budget / used
        for k in range(k_users):
            w[m, k] = blocks[k] * scale
    return w


def projected_gradient_refine(heff, coeffs, gram, noise, w, budget=P, iters=120):
    "Independent first-order refinement: gradient step, PSD clip, budget scale."
    m_cells, _, k_users, _ = heff.shape
    best = subproblem_objective(heff, coeffs, noise, w)
    current = w.copy()
    step = 1e-2
    for _ in range(iters):
        totals = user_totals(heff, noise, current)
        grad = np.array(coeffs, dtype=complex)
        outer = np.einsum("imka,imkb->imkab", heff, heff.conj())
        for p in range(m_cells):
            acc = np.zeros((k_users, k_users), dtype=complex)
            for mm in range(m_cells):
                for kk in range(k_users):
                    acc += outer[p, mm, kk] / totals[mm, kk]
            for q in range(k_users):
                grad[p, q] -= acc / math.log(2.0)
        scale = max(np.abs(grad).max(), 1e-300)
        candidate = current - (step / scale) * grad
        for m in range(m_cells):
            for k in range(k_users):
                block = 0.5 * (candidate[m, k] + candidate[m, k].conj().T)
                evals, evecs = np.linalg.eigh(block)
                evals = np.clip(evals, 0.0, None)
                candidate[m, k] = (evecs * evals) @ evecs.conj().T
            used = sum(np.trace(gram[m] @ candidate[m, k]).real for k in range(k_users))
            if used > budget:
                candidate[m] *= budget / used
        value = subproblem_objective(heff, coeffs, noise, candidate)
        if value < best:
            best = value
            current = candidate
        else:
            step *= 0.5
            if step < 1e-12:
                break
    return best


class TestBasis:
    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_orthonormal_hermitian(self, k):
        basis = hermitian_basis(k)
        assert basis.shape == (k * k, k, k)
        for a in range(k * k):
            assert np.allclose(basis[a], basis[a].conj().T)
            for b in range(k * k):
                inner = np.trace(basis[a].conj().T @ basis[b]).real
                assert inner == pytest.approx(1.0 if a == b else 0.0, abs=1e-14)


class TestSolver:
    def test_single_user_scalar_oracle(self):
        # One cell, one RF chain: the budget trace constraint pins the
        # scalar covariance at P / ||f_A||^2 (monotone objective).
        n = 129
        heff = np.array([[[[0.01 + 0.002j]]]], dtype=complex)
        gram = np.array([[[n]]], dtype=complex)
        sol = solve_relaxed_subproblem(heff, None, gram, P, SIGMA2)
        w = sol.covariances.ravel().real[0]
        assert w == pytest.approx(P / n, rel=1e-5)
        expected_obj = -math.log2(w * abs(heff.ravel()[0]) ** 2 + SIGMA2)
        assert sol.objective == pytest.approx(expected_obj, rel=1e-9)

    def test_vanishing_budget(self):
        heff, coeffs, gram = random_instance(0)
        sol = solve_relaxed_subproblem(heff, coeffs, gram, 1e-9, SIGMA2)
        assert np.abs(sol.covariances).max() <= 1e-9

    def test_feasibility_contract(self):
        heff, coeffs, gram = random_instance(1)
        sol = solve_relaxed_subproblem(heff, coeffs, gram, P, SIGMA2)
        for m in range(2):
            for k in range(3):
                block = sol.covariances[m, k]
                assert np.allclose(block, block.conj().T, atol=1e-10)
                assert np.linalg.eigvalsh(block)[0] >= -1e-8
            used = sum(np.trace(gram[m] @ sol.covariances[m, k]).real for k in range(3))
            assert used <= P + 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_beats_random_points_and_refinement(self, seed):
        heff, coeffs, gram = random_instance(seed)
        sol = solve_relaxed_subproblem(heff, coeffs, gram, P, SIGMA2)
        rng = np.random.default_rng(seed + 1000)
        objectives = np.array(
            [
                subproblem_objective(heff, coeffs, SIGMA2, random_feasible_point(rng, gram, 2, 3))
                for _ in range(10_000)
            ]
        )
        margin = 1e-5 * abs(sol.objective)
        assert sol.objective <= objectives.min() + margin
        refined = projected_gradient_refine(heff, coeffs, gram, SIGMA2, sol.covariances)
        assert sol.objective <= refined + margin

    @pytest.mark.parametrize("seed", range(10))
    def test_kkt_residuals(self, seed):
        heff, coeffs, gram = random_instance(seed)
        sol = solve_relaxed_subproblem(heff, coeffs, gram, P, SIGMA2)
        res = sol.residuals
        assert res["stationarity"] <= 1e-6
        assert res["dual_infeasibility"] <= 1e-6
        assert res["complementarity"] <= 1e-6
        assert res["power_violation"] <= 1e-6
        assert res["min_eigenvalue"] >= -1e-8

    def test_warm_start_agrees(self):
        heff, coeffs, gram = random_instance(4)
        cold = solve_relaxed_subproblem(heff, coeffs, gram, P, SIGMA2)
        warm = solve_relaxed_subproblem(heff, coeffs, gram, P, SIGMA2, initial=cold.covariances)
        assert warm.objective == pytest.approx(cold.objective, abs=1e-6)
