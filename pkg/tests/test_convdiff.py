import numpy as np
import pytest
import scipy.io

from svdrecycle.convdiff import (ProblemParams, SequenceConfig, Xoshiro256, assemble_step,
                                 convection_matrix, export_matrix_market, export_vector,
                                 forcing, forcing_coefficients, iteration_stats, mass_matrix,
                                 run_sequence, stiffness_matrix, velocity)
from svdrecycle.recycle import InitialGuess, RecycleMethod

MASK = (1 << 64) - 1


def reference_xoshiro(state, count):
    """Plain transcription of xoshiro256** used as an oracle."""
    s = list(state)
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & MASK  # noqa: E731
    out = []
    for _ in range(count):
        out.append(rotl(s[1] * 5 & MASK, 7) * 9 & MASK)
        t = s[1] << 17 & MASK
        s[2] ^= s[0]; s[3] ^= s[1]; s[1] ^= s[2]; s[0] ^= s[3]  # noqa: E702
        s[2] ^= t
        s[3] = rotl(s[3], 45)
    return out


def test_rng_seeding_and_stream():
    rng = Xoshiro256(0)
    assert rng.s == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                     0x06C45D188009454F, 0xF88BB8A8724C81EC]
    expected = reference_xoshiro(rng.s, 20)
    assert [rng.next() for _ in range(20)] == expected
    u = [Xoshiro256(7).uniform() for _ in range(3)]
    assert len(set(u)) == 1 and 0.0 <= u[0] < 1.0


def test_forcing_coefficients():
    c = forcing_coefficients(Xoshiro256(3))
    assert c.shape == (16,) and c[0] == 1.0
    assert np.all(np.abs(c[1:]) <= 1.0)
    assert np.array_equal(c, forcing_coefficients(Xoshiro256(3)))


def test_velocity():
    assert np.allclose(velocity(0.5, 0.5), (0.0, 0.0), atol=1e-15)
    assert np.allclose(velocity(0.0, 0.0), (0.0, 0.0))
    # divergence free: d/dx bx + d/dy by = 0
    x, y, e = 0.3, 0.7, 1e-6
    div = ((velocity(x + e, y)[0] - velocity(x - e, y)[0])
           + (velocity(x, y + e)[1] - velocity(x, y - e)[1])) / (2 * e)
    assert abs(div) < 1e-8


def test_forcing_zero_amplitude_and_determinism():
    p = ProblemParams(N=8, C=0.0)
    assert not np.any(forcing(p, forcing_coefficients(Xoshiro256(1))))
    p = ProblemParams(N=8)
    f1 = forcing(p, forcing_coefficients(Xoshiro256(5)))
    f2 = forcing(p, forcing_coefficients(Xoshiro256(5)))
    assert f1.tobytes() == f2.tobytes() and np.any(f1)


def test_mass_matrix_hand_values():
    N = 4
    h = 1.0 / N
    M = mass_matrix(N, full=True).toarray()
    assert abs(M.sum() - 1.0) < 1e-14
    # corner node touches one element: diagonal h^2/9, edge neighbour h^2/18, diagonal one h^2/36
    assert abs(M[0, 0] - h * h / 9) < 1e-14
    assert abs(M[0, 1] - h * h / 18) < 1e-14
    assert abs(M[0, N + 2] - h * h / 36) < 1e-14
    interior = (N + 1) + 1
    assert abs(M[interior, interior] - 4 * h * h / 9) < 1e-14


def test_mass_matches_refined_quadrature():
    # Q1 x Q1 products are biquadratic: 2x2 Gauss is exact, so 4x4 agrees
    from svdrecycle import convdiff as cd
    mesh = cd._mesh(6)
    pts, wts = cd._quadrature(4)
    phi, _ = cd._reference_q1(pts)
    refined = mesh.h ** 2 * np.einsum("q,qa,qb->ab", wts, phi, phi)
    assert np.allclose(cd._local_mass(mesh), refined, rtol=0, atol=1e-14)


def test_mass_spd_and_stiffness_rows(rng):
    M = mass_matrix(8).to_dense()
    for _ in range(5):
        x = rng.standard_normal(M.shape[0])
        assert x @ M @ x > 0
    K = stiffness_matrix(8, full=True)
    assert np.abs(np.asarray(K.sum(axis=1))).max() < 1e-13
    assert np.allclose(stiffness_matrix(8).to_dense(), stiffness_matrix(8).to_dense().T)


def test_convection_annihilates_constants():
    N = 8
    ones = np.ones((N + 1) ** 2)
    Nfull = convection_matrix(N, np.ones((N - 1) ** 2), full=True)
    assert np.abs(Nfull @ ones).max() < 1e-13


def test_zero_previous_solution_gives_symmetric_matrix():
    p = ProblemParams(N=10)
    sysm = assemble_step(p, np.zeros(p.n_unknowns), 1, Xoshiro256(0))
    A = sysm.A.to_dense()
    assert np.abs(A - A.T).max() <= 1e-14 * np.abs(A).max()
    expected = mass_matrix(10).to_dense() / p.dt + p.nu * stiffness_matrix(10).to_dense()
    assert np.allclose(A, expected, rtol=0, atol=1e-14)


def test_assemble_validation():
    with pytest.raises(ValueError):
        assemble_step(ProblemParams(N=4), np.zeros(3), 1, Xoshiro256(0))
    for bad in (dict(N=1), dict(nu=0.0), dict(dt=-1.0), dict(seed=-1)):
        with pytest.raises(ValueError):
            ProblemParams(**bad)


def test_pattern_constant_across_steps():
    keys = set()

    def on_step(step, system, x, report):
        keys.add(system.A.pattern_key())

    run_sequence(ProblemParams(N=8, n_steps=4), SequenceConfig(), on_step=on_step)
    assert len(keys) == 1


def test_trivial_dynamics():
    p = ProblemParams(N=8, nu=10.0, C=0.0, n_steps=1)
    res = run_sequence(p, SequenceConfig(), keep_solutions=True)
    assert not np.any(res.solutions[0]) and res.all_converged


def test_sequence_determinism():
    p = ProblemParams(N=8, n_steps=8)
    cfg = SequenceConfig(method=RecycleMethod.AUGMENTED_OBLIQUE, window_m=4, window_s=3)
    a = run_sequence(p, cfg, keep_solutions=True)
    b = run_sequence(p, cfg, keep_solutions=True)
    assert np.array_equal(a.iterations, b.iterations)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.solutions, b.solutions))
    c = run_sequence(ProblemParams(N=8, n_steps=8, seed=1), cfg)
    assert a.all_converged and c.all_converged


@pytest.mark.parametrize("method", list(RecycleMethod))
def test_every_method_converges_on_small_run(method):
    res = run_sequence(ProblemParams(N=8, n_steps=6, nu=0.01),
                       SequenceConfig(method=method, window_m=4, window_s=2))
    assert res.all_converged
    assert all(r.true_relative_residual <= 1e-8 for r in res.reports)


def test_projection_beats_extrapolation_small():
    p = ProblemParams(N=16, nu=0.1, n_steps=50)
    ext = run_sequence(p, SequenceConfig(guess=InitialGuess.extrapolate(1)))
    proj = run_sequence(p, SequenceConfig(guess=InitialGuess.project(), window_s=2))
    assert proj.iterations.mean() <= ext.iterations.mean()


def test_iteration_stats():
    avg, sd = iteration_stats([1, 2, 3, 4])
    assert avg == 2.5 and abs(sd - np.std([1, 2, 3, 4], ddof=1)) < 1e-15
    assert iteration_stats([5, 1, 2], skip=1) == (1.5, pytest.approx(np.sqrt(0.5)))
    assert iteration_stats([3]) == (3.0, 0.0)


def test_sequence_config_validation():
    with pytest.raises(ValueError):
        SequenceConfig(preconditioner="ilu")
    with pytest.raises(ValueError):
        SequenceConfig(window_m=2, window_s=3)


def test_exports_round_trip(tmp_path):
    p = ProblemParams(N=6)
    sysm = assemble_step(p, np.linspace(0, 1, p.n_unknowns), 1, Xoshiro256(2))
    export_matrix_market(tmp_path / "A.mtx", sysm.A)
    export_vector(tmp_path / "b.txt", sysm.b)
    A = scipy.io.mmread(tmp_path / "A.mtx").toarray()
    assert np.array_equal(A, sysm.A.to_dense())
    assert np.array_equal(np.loadtxt(tmp_path / "b.txt"), sysm.b)
