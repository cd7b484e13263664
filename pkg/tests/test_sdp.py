import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_force_max, random_density, random_hermitian, random_instance
from cowqkd.errors import ConvergenceError, InfeasibleError
from cowqkd.operators import HermitianOperator, diag, identity
from cowqkd.sdp import SdpCertificate, SdpProblem, certified_bound, independent_constraints, solve

SX = HermitianOperator([[0, 1], [1, 0]])
SZ = diag([1, -1])
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _cert(dual_value, mineig, trace_bound):
    return SdpCertificate(np.eye(1), np.zeros(1), 0.0, dual_value, 0.0, mineig, trace_bound)


# ------------------------------------------------------ constraint reduction


def test_duplicate_constraint_dropped():
    a = HermitianOperator(random_hermitian(np.random.default_rng(0), 3))
    p = SdpProblem(identity(3), [(a, 1.0), (a, 1.0)])
    assert len(independent_constraints(p).constraints) == 1


def test_scalar_multiple_dropped():
    a = HermitianOperator(random_hermitian(np.random.default_rng(1), 3))
    p = SdpProblem(identity(3), [(a, 1.0), (2 * a, 2.0)])
    assert len(independent_constraints(p).constraints) == 1


def test_contradiction_is_infeasible():
    a = HermitianOperator(random_hermitian(np.random.default_rng(2), 3))
    with pytest.raises(InfeasibleError):
        independent_constraints(SdpProblem(identity(3), [(a, 1.0), (a, 1.5)]))


def test_zero_operator_with_nonzero_rhs():
    with pytest.raises(InfeasibleError):
        independent_constraints(SdpProblem(identity(2), [(identity(2) * 0, 1.0)]))


def test_reduction_keeps_consistent_combinations():
    rng = np.random.default_rng(3)
    rho = random_density(rng, 3)
    ops = [HermitianOperator(random_hermitian(rng, 3)) for _ in range(3)]
    cons = [(a, a.expectation(rho)) for a in ops]
    combo = ops[0] + 2 * ops[2]
    cons.append((combo, combo.expectation(rho)))
    red = independent_constraints(SdpProblem(identity(3), cons))
    assert len(red.constraints) == 3


def test_full_basis_leaves_d_squared():
    rng = np.random.default_rng(4)
    rho = random_density(rng, 2)
    ops = [HermitianOperator(random_hermitian(rng, 2)) for _ in range(7)]
    red = independent_constraints(SdpProblem(identity(2), [(a, a.expectation(rho)) for a in ops]))
    assert len(red.constraints) == 4


# --------------------------------------------------------------- solving


def test_top_eigenvalue():
    c = solve(SdpProblem(SZ, [(identity(2), 1.0)]))
    assert c.status == "optimal"
    assert c.primal_value == pytest.approx(1.0, abs=1e-8)
    assert certified_bound(c) == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(c.primal_matrix, np.diag([1, 0]), atol=1e-6)


def test_fully_determined_feasible_set():
    # rho is forced to |0><0|; no interior point exists, so the solver may stop early
    p = SdpProblem(SX, [(identity(2), 1.0), (SZ, 1.0)])
    try:
        c = solve(p)
    except ConvergenceError as exc:
        c = exc.certificate
    # the off-diagonal entries scale like the square root of the residual
    assert c.primal_value == pytest.approx(0.0, abs=1e-3)
    bound = certified_bound(c)
    assert 0.0 <= bound < 1e-4


def test_infeasible_problem_raises():
    # tr rho = 1 and tr(diag(1, 0) rho) = 2 cannot hold for rho >= 0
    p = SdpProblem(SX, [(identity(2), 1.0), (diag([1, 0]), 2.0)])
    with pytest.raises((InfeasibleError, ConvergenceError)):
        solve(p)


def test_certificate_fields():
    rng = np.random.default_rng(5)
    p = random_instance(rng)
    c = solve(p)
    assert c.primal_residual <= 1e-9
    assert np.linalg.eigvalsh(c.primal_matrix)[0] >= -1e-9
    assert c.trace_bound == pytest.approx(1.0)
    assert c.gap == pytest.approx(c.dual_value - c.primal_value)
    assert c.iterations == len(c.history)


def test_max_iter_raises_with_certificate():
    p = random_instance(np.random.default_rng(6))
    with pytest.raises(ConvergenceError) as info:
        solve(p, max_iter=2)
    assert info.value.certificate is not None
    assert np.isfinite(certified_bound(info.value.certificate))


# ------------------------------------------------------- certified bound


def test_bound_exact_dual():
    assert certified_bound(_cert(0.7, 0.0, 1.0)) == 0.7
    assert certified_bound(_cert(0.7, 0.3, None)) == 0.7


def test_bound_eigenvalue_shift():
    assert certified_bound(_cert(0.7, -0.01, 3.0)) == pytest.approx(0.73)
    assert certified_bound(_cert(0.7, -0.01, None)) == np.inf


def test_bound_from_perturbed_dual_is_valid():
    # shifting y away from optimal must never give a bound below the optimum
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = random_instance(rng)
        c = solve(p)
        y = c.dual_vector + 1e-3 * rng.normal(size=c.dual_vector.size)
        slack = -p.objective.matrix + sum(yi * a.matrix for yi, (a, _) in zip(y, p.constraints))
        bad = SdpCertificate(c.primal_matrix, y, c.primal_value, float(p.b @ y), 0.0, float(np.linalg.eigvalsh(slack)[0]), 1.0)
        assert certified_bound(bad) >= c.primal_value - 1e-9


def test_weighted_trace_certificate():
    # objective diag(2, 1), weight diag(2, 1); the weighted trace is pinned to 1
    w = np.array([2.0, 1.0])
    p = SdpProblem(diag([2.0, 1.0]) + 0.5 * SX, [(diag(w), 1.0)], trace_weight=w)
    c = solve(p)
    e = np.diag(1 / np.sqrt(w))
    exact = np.linalg.eigvalsh(e @ p.objective.matrix @ e)[-1]
    assert c.primal_value == pytest.approx(exact, abs=1e-7)
    assert c.trace_bound == pytest.approx(1.0)
    assert certified_bound(c) >= exact - 1e-9


def test_trace_weight_outside_span_gives_no_bound():
    p = SdpProblem(SX, [(diag([1.0, 0.0]), 0.5)], trace_weight=np.array([1.0, 1.0]))
    from cowqkd.sdp import _trace_bound

    assert _trace_bound(p) is None


# -------------------------------------------------------- random instances


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(2024)
    for i in range(25):
        p = random_instance(rng)
        c = solve(p)
        brute, _ = brute_force_max(p, seed=i)
        assert c.primal_value == pytest.approx(brute, abs=1e-4)
        assert certified_bound(c) >= brute - 1e-7
        assert c.relative_gap <= 1e-6


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_weak_duality(seed):
    c = solve(random_instance(np.random.default_rng(seed)))
    slack = 1e-6 * max(1.0, abs(c.primal_value))
    assert c.dual_value >= c.primal_value - slack
    # the primal iterate may violate constraints by up to the feasibility tolerance
    assert certified_bound(c) >= c.primal_value - slack


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(min_value=0.01, max_value=100.0))
def test_scaling_covariance(seed, scale):
    p = random_instance(np.random.default_rng(seed))
    a = solve(p)
    b = solve(SdpProblem(p.objective * scale, p.constraints))
    tol = 1e-6 * scale * max(1.0, abs(a.primal_value))
    assert b.primal_value == pytest.approx(scale * a.primal_value, abs=tol)
    assert b.dual_value == pytest.approx(scale * a.dual_value, abs=tol)


def _block_instance(rng, sizes):
    n = sum(sizes)
    edges = np.cumsum([0] + list(sizes))
    blocks = [np.arange(edges[i], edges[i + 1]) for i in range(len(sizes))]
    rho0 = np.zeros((n, n), dtype=complex)
    for blk in blocks:
        rho0[np.ix_(blk, blk)] = random_density(rng, blk.size) / len(blocks)

    def block_diag_op():
        m = np.zeros((n, n), dtype=complex)
        for blk in blocks:
            m[np.ix_(blk, blk)] = random_hermitian(rng, blk.size)
        return HermitianOperator(m)

    cons = [(identity(n), 1.0)]
    for _ in range(3):
        a = block_diag_op()
        cons.append((a, float(np.trace(a.matrix @ rho0).real)))
    return block_diag_op(), cons, blocks


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_blocks_match_flat(seed):
    rng = np.random.default_rng(seed)
    obj, cons, blocks = _block_instance(rng, [2, 3, 1])
    flat = solve(SdpProblem(obj, cons))
    split = solve(SdpProblem(obj, cons, blocks=blocks))
    assert split.primal_value == pytest.approx(flat.primal_value, abs=1e-7)
    assert certified_bound(split) >= flat.primal_value - 1e-9


def test_blocks_must_be_respected():
    with pytest.raises(ValueError):
        SdpProblem(SX, [(identity(2), 1.0)], blocks=[[0], [1]])
    with pytest.raises(ValueError):
        SdpProblem(SZ, [(identity(2), 1.0)], blocks=[[0], [0]])


def test_mismatched_dimensions():
    with pytest.raises(ValueError):
        SdpProblem(SZ, [(identity(3), 1.0)])


def test_deterministic():
    p = random_instance(np.random.default_rng(8))
    a, b = solve(p), solve(p)
    assert a.primal_matrix.tobytes() == b.primal_matrix.tobytes()
    assert a.dual_vector.tobytes() == b.dual_vector.tobytes()


def test_dump_format(tmp_path):
    p = SdpProblem(SX, [(identity(2), 1.0), (SZ, 0.25)])
    path = tmp_path / "p.txt"
    p.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# dim 2 constraints 2"
    rows = [tuple(float(x) for x in ln.split()) for ln in lines[1:]]
    assert (0, 0, 1, 1.0, 0.0, 0.0) in rows
    assert (1, 0, 0, 1.0, 0.0, 1.0) in rows
    assert (2, 1, 1, -1.0, 0.0, 0.25) in rows
    assert len(rows) == 5
    # rebuilding from the triplets reproduces every operator
    mats = {}
    for idx, r, c, re, im, _ in rows:
        m = mats.setdefault(int(idx), np.zeros((2, 2), dtype=complex))
        m[int(r), int(c)] = re + 1j * im
        m[int(c), int(r)] = re - 1j * im
    assert np.allclose(mats[2], SZ.matrix)
