import json

import numpy as np
import pytest

from sharedlane.markov import ObservationParams, build_joint_generator
from sharedlane.synthesis import (ControllerGains, SynthesisError, assemble_mic, assemble_nominal,
                                  certify_dissipation, coupling_support, dissipation_matrix, lifted_matrix,
                                  regularization_basis, synthesize)


def block_sizes(prob):
    return [prob.evaluate_block(b, prob.zero_values()).shape[0] for b in range(len(prob.blocks))]


class TestAssembly:
    def test_full_support_block_sizes(self, sys10, gen):
        prob = assemble_nominal(sys10, gen, 1.0)
        assert len(prob.blocks) == 4
        assert block_sizes(prob) == [4 + 1 + 1 + 4 + 4 * 3] * 4

    def test_sparse_support(self, sys10, rates):
        gen0 = build_joint_generator(rates, ObservationParams(0.0, 0.0))
        for idx in range(4):
            assert len(coupling_support(gen0, idx)[0]) == 1
        assert block_sizes(assemble_nominal(sys10, gen0, 1.0)) == [14] * 4

    def test_mic_adds_effort_row(self, sys10, gen):
        assert block_sizes(assemble_mic(sys10, gen, 1.0, 2.0)) == [23] * 4

    @pytest.mark.parametrize("builder", [lambda s, g: assemble_nominal(s, g, 0.3),
                                         lambda s, g: assemble_mic(s, g, 0.3, 1.5)])
    def test_affinity(self, sys10, gen, rng, builder):
        prob = builder(sys10, gen)
        zero = prob.zero_values()
        for _ in range(5):
            x1, x2 = rng.normal(size=prob.n_dec), rng.normal(size=prob.n_dec)
            v1, v2, v12 = prob.unpack(x1), prob.unpack(x2), prob.unpack(x1 + x2)
            for b in range(len(prob.blocks)):
                resid = (prob.evaluate_block(b, v12) - prob.evaluate_block(b, v1) - prob.evaluate_block(b, v2)
                         + prob.evaluate_block(b, zero))
                assert np.abs(resid).max() <= 1e-9 * (1 + np.abs(prob.evaluate_block(b, v12)).max())

    def test_bad_arguments(self, sys10, gen):
        with pytest.raises(ValueError):
            assemble_nominal(sys10, gen, 0.0)
        with pytest.raises(ValueError):
            assemble_mic(sys10, gen, 1.0, -0.1)


class TestRegularization:
    def test_rank_one_stack(self, sys10):
        from dataclasses import replace

        s = replace(sys10, K_H=(np.array([[1.0, 0, 0, 0]]), np.array([[1.0, 0, 0, 0]])))
        R = regularization_basis(s)
        np.testing.assert_allclose(np.abs(R.ravel()), [1, 0, 0, 0], atol=1e-12)

    def test_dominant_direction(self, sys10):
        R = regularization_basis(sys10)
        S = np.vstack(sys10.K_H)
        assert R.shape == (4, 1)
        assert np.linalg.norm(R) == pytest.approx(1.0)
        _, sv, vt = np.linalg.svd(S)
        assert abs(float(vt[0] @ R[:, 0])) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(S @ (np.eye(4) - R @ R.T), 2) <= np.linalg.norm(S, 2)
        assert np.linalg.norm(S @ R, 2) == pytest.approx(sv[0])

    def test_zero_gains_empty(self, sys10):
        from dataclasses import replace

        s = replace(sys10, K_H=(np.zeros((1, 4)), np.zeros((1, 4))))
        assert regularization_basis(s).shape == (4, 0)


class TestSynthesis:
    def test_solution_properties(self, plant, nominal_gains):
        g = nominal_gains
        assert g.gamma > 0 and g.epsilon in [pytest.approx(e) for e in np.logspace(-3, 2, 11)]
        for X in g.X.values():
            assert np.abs(X - X.T).max() <= 1e-10
            assert np.linalg.eigvalsh(X).min() > 0
        best = next(d for d in g.diagnostics if d.get("gamma") == g.gamma)
        assert best["equality_residual"] <= 1e-9
        assert len(g.diagnostics) == 11

    def test_certificates_pass(self, plant, nominal_gains, mic2_gains):
        assert certify_dissipation(plant.sys, plant.gen, nominal_gains).passed
        rep = certify_dissipation(plant.sys, plant.gen, mic2_gains)
        assert rep.passed and rep.beta == 2.0

    def test_zero_gains_fail(self, plant):
        gains = ControllerGains.zero()
        gains.X = {z: np.eye(4) for z in plant.gen.states}
        rep = certify_dissipation(plant.sys, plant.gen, gains, gamma=1.0)
        assert not rep.passed

    def test_mic_zero_weight_matches_nominal(self, plant, ngsim, nominal_gains):
        g0 = synthesize(plant.sys, plant.gen, beta=0.0, eps_grid=ngsim.eps_grid)
        assert abs(g0.gamma - nominal_gains.gamma) <= 1e-4

    def test_mic_more_conservative(self, nominal_gains, mic2_gains):
        assert mic2_gains.gamma > nominal_gains.gamma

    def test_infeasible_grid_raises(self, plant):
        # an unstable hidden chain cannot be fixed with a single tiny slack scale
        with pytest.raises(SynthesisError) as err:
            synthesize(plant.sys, plant.gen, beta=1e6, eps_grid=(1e-3,))
        assert err.value.diagnostics and err.value.diagnostics[0]["status"] != "optimal"

    def test_json_roundtrip(self, nominal_gains, tmp_path):
        p = tmp_path / "g.json"
        nominal_gains.save(p)
        back = ControllerGains.load(p)
        for a, b in zip(back.K_AV, nominal_gains.K_AV):
            np.testing.assert_array_equal(a, b)
        assert back.D_AV == nominal_gains.D_AV and back.gamma == nominal_gains.gamma
        assert back.X.keys() == nominal_gains.X.keys()
        json.dumps(back.to_json())


def test_beta_zero_certificate_reduces(plant, nominal_gains):
    P = {z: np.linalg.inv(X) for z, X in nominal_gains.X.items()}
    g = nominal_gains
    for z in plant.gen.states:
        a = dissipation_matrix(plant.sys, plant.gen, g.K_AV, g.D_AV, P, z, g.gamma, 0.0)
        b = dissipation_matrix(plant.sys, plant.gen, g.K_AV, g.D_AV, P, z, g.gamma)
        np.testing.assert_array_equal(a, b)


def test_schur_equivalence(plant, mic2_gains, rng):
    """Lifted X-coordinate block and reduced P-coordinate matrix agree on definiteness."""
    sys, gen = plant.sys, plant.gen
    agreements = 0
    for _ in range(10):
        gamma = mic2_gains.gamma * rng.uniform(0.3, 1.5)
        beta = rng.uniform(0.0, 3.0)
        scale = rng.uniform(0.5, 1.5)
        K = tuple(scale * k for k in mic2_gains.K_AV)
        D = tuple(scale * d for d in mic2_gains.D_AV)
        X = {z: x * rng.uniform(0.8, 1.2) for z, x in mic2_gains.X.items()}
        P = {z: np.linalg.inv(x) for z, x in X.items()}
        for z in gen.states:
            big = np.linalg.eigvalsh(lifted_matrix(sys, gen, K, D, X, z, gamma, beta)).max()
            small = np.linalg.eigvalsh(dissipation_matrix(sys, gen, K, D, P, z, gamma, beta)).max()
            if min(abs(big), abs(small)) < 1e-9:
                continue
            assert (big < 0) == (small < 0)
            agreements += 1
    assert agreements >= 30
