import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridloc import channel as ch
from hybridloc.errors import DomainError, SeparationInfeasible
from hybridloc.ris_opt import AdmmSettings, RisContext, admm_optimize
from hybridloc.scene import (
    RegionLabel,
    RisPose,
    SphericalCoord,
    element_grid,
    fraunhofer_distance,
    relative_spherical,
    rotation_from_euler,
)


def surface(wavelength, n=16, origin=(0, 0, 0), yaw=0.0):
    return RisPose(np.asarray(origin, float), rotation_from_euler(yaw), n, n, wavelength / 2)


def wrapped(x):
    return np.angle(np.exp(1j * x))


class TestSteering:
    def test_single_element_nf(self, wavelength):
        grid = np.zeros((1, 3))
        s = ch.nf_steering(SphericalCoord(3.7, 0.2, -0.1), grid, wavelength)
        assert np.allclose(s, [np.exp(-2j * np.pi * 3.7 / wavelength)])

    def test_symmetric_pair_boresight(self, wavelength):
        grid = np.array([[0, -0.01, 0], [0, 0.01, 0]])
        s = ch.nf_steering(SphericalCoord(1.0, 0.0, 0.0), grid, wavelength)
        assert np.isclose(s[0], s[1])

    def test_unit_modulus(self, wavelength, rng):
        grid = element_grid(surface(wavelength))
        s = ch.nf_steering(SphericalCoord(0.7, 0.3, -0.2), grid, wavelength)
        a = ch.ff_steering(-0.4, 0.25, grid, wavelength)
        assert np.allclose(np.abs(s), 1) and np.allclose(np.abs(a), 1)

    def test_ff_boresight_is_all_ones(self, wavelength):
        grid = element_grid(surface(wavelength))
        assert np.allclose(ch.ff_steering(0.0, 0.0, grid, wavelength), 1.0)

    def test_ff_conjugate_is_mirrored_direction(self, wavelength):
        grid = element_grid(surface(wavelength, n=4))
        a = ch.ff_steering(0.3, -0.2, grid, wavelength)
        # mirroring the direction in the surface plane negates p . u
        assert np.allclose(np.conj(a), ch.ff_steering(-0.3, 0.2, grid, wavelength))

    def test_dirichlet_kernel(self, wavelength):
        n = 16
        grid = np.zeros((n, 3))
        grid[:, 1] = (np.arange(n) - (n - 1) / 2) * wavelength / 2
        t1, t2 = 0.1, 0.35
        a1 = ch.ff_steering(t1, 0.0, grid, wavelength)
        a2 = ch.ff_steering(t2, 0.0, grid, wavelength)
        psi = np.pi * (np.sin(t2) - np.sin(t1))
        expected = abs(np.sin(n * psi / 2) / (n * np.sin(psi / 2)))
        got = abs(np.vdot(a1, a2)) / n
        assert got < 1
        assert np.isclose(got, expected, atol=1e-12)

    def test_near_field_tends_to_far_field(self, wavelength):
        """Phase deviation after removing the common phase, for growing range."""
        pose = surface(wavelength)
        grid = element_grid(pose)
        f = fraunhofer_distance(pose, wavelength)
        theta, phi = 0.3, -0.2

        def deviation(r):
            s = ch.nf_steering(SphericalCoord(r, theta, phi), grid, wavelength)
            a = ch.ff_steering(theta, phi, grid, wavelength)
            d = np.angle(s * np.conj(a))
            d = wrapped(d - np.angle(np.mean(np.exp(1j * d))))
            return float(np.max(np.abs(d - d.mean())))

        devs = [deviation(k * f) for k in (10, 100, 1000)]
        # second-order term: deviation shrinks ~10x per decade of range
        assert devs[0] > devs[1] > devs[2]
        assert 8 < devs[0] / devs[1] < 12 and 8 < devs[1] / devs[2] < 12
        assert devs[2] < 1e-3


class TestPathGain:
    def test_inverse_distance(self, wavelength):
        assert np.isclose(abs(ch.path_gain(2.0, wavelength)), abs(ch.path_gain(1.0, wavelength)) / 2)

    def test_unit_magnitude_point(self, wavelength):
        assert np.isclose(abs(ch.path_gain(wavelength / (4 * np.pi), wavelength)), 1.0)

    def test_phase_wraps_at_wavelength(self, wavelength):
        g = ch.path_gain(wavelength, wavelength)
        assert abs(wrapped(np.angle(g))) < 1e-9

    @pytest.mark.parametrize("r", [0.0, -1.0])
    def test_rejects_non_positive(self, r, wavelength):
        with pytest.raises(DomainError):
            ch.path_gain(r, wavelength)


class TestUserChannel:
    def test_no_scatterers_is_direct(self, wavelength):
        pose = surface(wavelength)
        user = np.array([1.0, 0.3, -0.2])
        h = ch.user_ris_channel(user, pose, ch.ScattererSet(np.zeros((0, 3))), wavelength)
        sph = relative_spherical(user, pose)
        expected = ch.path_gain(sph.r, wavelength) * ch.nf_steering(sph, element_grid(pose), wavelength)
        assert np.allclose(h, expected, rtol=0, atol=1e-15)

    def test_far_user_uses_plane_wave(self, wavelength):
        pose = surface(wavelength)
        user = np.array([30.0, 4.0, -2.0])
        h = ch.user_ris_channel(user, pose, ch.ScattererSet(), wavelength)
        sph = relative_spherical(user, pose)
        expected = ch.path_gain(sph.r, wavelength) * ch.ff_steering(sph.theta, sph.phi, element_grid(pose), wavelength)
        assert np.allclose(h, expected)

    def test_zero_gain_scatterer_is_inert(self, wavelength):
        pose = surface(wavelength)
        user = np.array([1.0, 0.3, -0.2])
        a = ch.user_ris_channel(user, pose, ch.ScattererSet(np.zeros((0, 3))), wavelength)
        b = ch.user_ris_channel(user, pose, ch.ScattererSet([[2.0, -1.0, 0.5]], 0.0), wavelength)
        assert np.array_equal(a, b)

    def test_direct_term_dominates(self, wavelength):
        pose = surface(wavelength)
        user = np.array([1.2, 0.3, -0.2])
        q = np.array([2.0, -1.0, 0.5])
        scat = ch.ScattererSet([q], 0.3)
        direct = ch.user_ris_channel(user, pose, ch.ScattererSet(), wavelength)
        scatter = ch.user_ris_channel(user, pose, scat, wavelength) - direct
        assert 0.3 * abs(ch.path_gain(np.linalg.norm(user - q), wavelength)) < 1
        assert np.linalg.norm(direct) > np.linalg.norm(scatter)


class TestRisBsChannel:
    @pytest.fixture
    def setup(self, wavelength):
        pose = surface(wavelength, origin=(0, 0, 1.5))
        bs_pose = RisPose(np.zeros(3), rotation_from_euler(0, np.pi / 2), 4, 4, wavelength / 2)
        bs_array = element_grid(bs_pose) @ bs_pose.orientation.T
        return pose, np.array([3.0, 1.0, 2.9]), bs_array

    def test_rank_one_without_nlos(self, setup, wavelength):
        pose, bs, arr = setup
        s = np.linalg.svd(ch.ris_bs_channel(pose, bs, arr, wavelength), compute_uv=False)
        assert s[1] < 1e-9 * s[0]

    def test_seeded_determinism(self, setup, wavelength):
        pose, bs, arr = setup
        a = ch.ris_bs_channel(pose, bs, arr, wavelength, 0.5, np.random.default_rng(3))
        b = ch.ris_bs_channel(pose, bs, arr, wavelength, 0.5, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_nlos_power_scaling(self, setup, wavelength):
        pose, bs, arr = setup
        los = ch.ris_bs_channel(pose, bs, arr, wavelength)
        powers = []
        for seed in range(100):
            h = ch.ris_bs_channel(pose, bs, arr, wavelength, 2.0, np.random.default_rng(seed))
            powers.append(np.linalg.norm(h - los) ** 2)
        assert abs(np.mean(powers) / 2.0 - 1) < 0.2
        assert np.all(np.abs(np.array(powers) / 2.0 - 1) < 0.2)


class TestSeparation:
    def _dirs(self, rng, v, m):
        q, _ = np.linalg.qr(rng.standard_normal((v, m)) + 1j * rng.standard_normal((v, m)))
        return q

    def _channels(self, dirs, rng, n=8):
        # H_m^T has dominant left singular vector dirs[:, m]
        return [np.outer(rng.standard_normal(n) + 1j * rng.standard_normal(n), d) for d in dirs.T]

    def test_single_surface(self, rng):
        d = self._dirs(rng, 4, 1)
        w = ch.bs_separation_weights(self._channels(d, rng))
        u = ch.dominant_bs_direction(self._channels(d, rng)[0])
        assert np.isclose(w[0] @ u, 1.0)
        # proportional to the conjugate direction
        assert np.isclose(abs(np.vdot(w[0].conj(), u)), np.linalg.norm(w[0]))

    def test_orthogonal_directions(self, rng):
        d = self._dirs(rng, 4, 2)
        hs = self._channels(d, rng)
        w = ch.bs_separation_weights(hs)
        us = [ch.dominant_bs_direction(h) for h in hs]
        for m in range(2):
            assert np.allclose(w[m], us[m].conj())

    def test_zero_forcing(self, rng):
        d = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
        hs = self._channels(d, rng)
        w = ch.bs_separation_weights(hs)
        us = np.stack([ch.dominant_bs_direction(h) for h in hs], axis=1)
        assert np.allclose(w @ us, np.eye(4), atol=1e-9)

    def test_collinear_is_infeasible(self, rng):
        d = self._dirs(rng, 4, 1)
        hs = self._channels(np.column_stack([d, d]), rng)
        with pytest.raises(SeparationInfeasible):
            ch.bs_separation_weights(hs)

    def test_too_many_surfaces(self, rng):
        hs = self._channels(rng.standard_normal((2, 3)) + 0j, rng)
        with pytest.raises(SeparationInfeasible):
            ch.bs_separation_weights(hs)


class TestReceived:
    def test_scalar_case(self):
        h = np.array([[[0.3 - 0.2j]]])
        rows = np.ones((1, 1, 1), dtype=complex)
        beta = np.array([[np.exp(0.7j)]])
        g = ch.synthesize_received(h, rows, beta, 0.0, np.random.default_rng(0))
        assert np.isclose(g[0, 0], beta[0, 0] * h[0, 0, 0], rtol=1e-14)

    def test_determinism(self, rng):
        k, m, n = 2, 3, 16
        h = rng.standard_normal((k, m, n)) + 1j * rng.standard_normal((k, m, n))
        rows = rng.standard_normal((m, m, n)) + 0j
        beta = ch.random_phases(np.random.default_rng(5), (m, n))
        a = ch.synthesize_received(h, rows, beta, 0.1, np.random.default_rng(9))
        b = ch.synthesize_received(h, rows, ch.random_phases(np.random.default_rng(5), (m, n)), 0.1,
                                   np.random.default_rng(9))
        assert np.array_equal(a, b)

    @given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
    def test_linear_in_user_channel(self, c):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((1, 2, 8)) + 1j * rng.standard_normal((1, 2, 8))
        rows = rng.standard_normal((2, 2, 8)) + 1j * rng.standard_normal((2, 2, 8))
        beta = ch.random_phases(rng, (2, 8))
        g1 = ch.noiseless_received(h, rows, beta)
        g2 = ch.noiseless_received(c * h, rows, beta)
        assert np.allclose(g2, c * g1, atol=1e-12)

    def test_noise_calibration(self, rng):
        h = np.ones((1, 1, 4), dtype=complex)
        rows = np.ones((1, 1, 4), dtype=complex)
        beta = np.ones((1, 4), dtype=complex)
        sigma2 = 0.37
        clean = ch.noiseless_received(h, rows, beta)
        draws = np.array([ch.synthesize_received(h, rows, beta, sigma2, rng)[0, 0] for _ in range(10_000)])
        est = np.mean(np.abs(draws - clean[0, 0]) ** 2)
        assert abs(est / sigma2 - 1) < 0.05
        # circular: real and imaginary parts share the power
        assert abs(np.var(draws.real) / np.var(draws.imag) - 1) < 0.1

    def test_negative_noise_rejected(self):
        with pytest.raises(DomainError):
            ch.synthesize_received(np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.ones((1, 1)), -1.0,
                                   np.random.default_rng(0))

    def test_snr_reference_matches_random_phase_power(self, rng):
        k, m, n = 2, 2, 32
        h = rng.standard_normal((k, m, n)) + 1j * rng.standard_normal((k, m, n))
        rows = rng.standard_normal((m, m, n)) + 1j * rng.standard_normal((m, m, n))
        rows[0, 1] = rows[1, 0] = 0
        ref = ch.reference_power(h, rows)
        powers = [np.mean(np.abs(ch.noiseless_received(h, rows, ch.random_phases(rng, (m, n)))) ** 2)
                  for _ in range(4000)]
        assert abs(np.mean(powers) / ref - 1) < 0.05
        assert np.isclose(ch.noise_variance_for_snr(h, rows, 10.0), ref / 10)


class TestInterRis:
    def test_rank_one_and_behind(self, wavelength):
        a = surface(wavelength, origin=(0, 0, 0), yaw=0.0)
        b = surface(wavelength, origin=(3, 0, 0), yaw=np.pi)
        c = surface(wavelength, origin=(-3, 0, 0), yaw=0.0)
        g = ch.inter_ris_channel(a, b, wavelength)
        s = np.linalg.svd(g, compute_uv=False)
        assert s[1] < 1e-9 * s[0]
        assert ch.inter_ris_channel(a, c, wavelength) is None

    def test_disabled_leakage_is_zero(self, rng):
        h = rng.standard_normal((1, 2, 4)) + 0j
        rows = rng.standard_normal((2, 2, 4)) + 0j
        beta = ch.random_phases(rng, (2, 4))
        assert np.array_equal(ch.noiseless_received(h, rows, beta, None), ch.noiseless_received(h, rows, beta))

    def test_nulling_suppresses_leakage(self, wavelength, rng):
        """After sidelobe suppression toward the other surface, leakage is small."""
        poses = [surface(wavelength, origin=(0, 0, 1.5), yaw=np.pi / 4),
                 surface(wavelength, origin=(4, 0, 1.5), yaw=3 * np.pi / 4)]
        grids = [element_grid(p) for p in poses]
        user = np.array([2.0, 1.5, 1.0])
        h = np.stack([ch.user_ris_channel(user, p, ch.ScattererSet(), wavelength, g)
                      for p, g in zip(poses, grids)])[None]
        bs = np.array([2.0, 2.0, 2.9])
        bs_pose = RisPose(np.zeros(3), rotation_from_euler(0, np.pi / 2), 4, 4, wavelength / 2)
        arr = element_grid(bs_pose) @ bs_pose.orientation.T
        hs = [ch.ris_bs_channel(p, bs, arr, wavelength) for p in poses]
        rows = ch.effective_rows(hs, ch.bs_separation_weights(hs))
        inter = ch.inter_ris_channels(poses, wavelength)
        beta = ch.random_phases(rng, (2, poses[0].num_elements))
        for m in range(2):
            other = relative_spherical(poses[1 - m].origin, poses[m])
            ctx = RisContext(poses[m], wavelength, rows[m, m], 1.0, beta[m], [], [(other.theta, other.phi)])
            beta[m] = admm_optimize(ctx, AdmmSettings()).beta
        leak = np.abs(ch.leakage_terms(h, rows, beta, inter))
        direct = np.abs(ch.noiseless_received(h, rows, beta))
        assert np.all(leak < 0.05 * direct)
