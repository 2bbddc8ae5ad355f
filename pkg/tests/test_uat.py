import numpy as np
import pytest

from setonet.errors import ConfigValidationError, NumericalFailure
from setonet.uat import (
    assemble_and_verify,
    build_construction,
    build_ideal_keys,
    build_lagrange_readout,
    build_queries_and_scale,
    format_report,
    min_code_gap,
    perturb_for_distinct_codes,
    random_reference_branch,
    reference_output,
    routing_matrix,
)


@pytest.fixture
def branch():
    rng = np.random.default_rng(0)
    return perturb_for_distinct_codes(random_reference_branch(rng, m=3, n=2, p=2, d_out=2), rng)


class TestPerturbation:
    def test_codes_become_distinct(self, rng):
        base = random_reference_branch(rng, m=4, n=3, p=2)
        # collapse every code to the same value
        base.xi[:] = 0.25
        assert min_code_gap(base.codes) == 0.0
        perturbed = perturb_for_distinct_codes(base, rng, magnitude=1e-3)
        assert perturbed.min_code_gap > 0
        assert np.max(np.abs(perturbed.xi - base.xi)) <= 1e-3

    def test_nonpositive_magnitude(self, branch, rng):
        with pytest.raises(ValueError, match="扰动幅度必须为正"):
            perturb_for_distinct_codes(branch, rng, magnitude=0.0)

    def test_unknown_activation(self, rng):
        with pytest.raises(ConfigValidationError, match="未知的激活函数"):
            random_reference_branch(rng, activation="gelu")


class TestIdealParts:
    def test_keys_are_identity_at_encodings(self, rng):
        encodings = rng.normal(size=(4, 6))
        eta = build_ideal_keys(encodings)
        np.testing.assert_allclose(eta(encodings), np.eye(4), atol=1e-12)

    def test_keys_reject_duplicate_encodings(self):
        with pytest.raises(ValueError, match="键映射无定义"):
            build_ideal_keys(np.ones((2, 3)))

    def test_scale_keeps_tokens_invertible(self, branch):
        scale, queries = build_queries_and_scale(branch)
        assert np.max(np.abs(branch.xi)) * branch.m / scale <= 0.5
        assert queries.shape == (branch.p * branch.n, branch.m)
        np.testing.assert_allclose(
            np.tanh(queries / np.sqrt(branch.m)) * scale / branch.m, branch.xi.reshape(-1, branch.m)
        )

    def test_non_invertible_mix_rejected(self, branch):
        with pytest.raises(ConfigValidationError, match="无法构造查询令牌"):
            build_queries_and_scale(branch, mix_fn="sigmoid")

    def test_lagrange_basis_is_delta_at_nodes(self, branch):
        codes = branch.codes.reshape(-1)
        readout = build_lagrange_readout(
            codes, branch.theta.reshape(-1), np.repeat(branch.routing, branch.n), branch.d_out
        )
        np.testing.assert_allclose(readout.basis(codes), np.eye(len(codes)), atol=1e-10)
        np.testing.assert_allclose(readout.basis(np.array([0.123])).sum(), 1.0)

    def test_lagrange_rejects_duplicates(self):
        with pytest.raises(ValueError, match="Lagrange 插值无定义"):
            build_lagrange_readout(np.array([0.1, 0.1]), np.zeros(2), np.zeros(2, dtype=int), 1)

    def test_routing_matrix_is_block_diagonal(self, branch):
        W = routing_matrix(branch)
        assert W.shape == (2, 4)
        np.testing.assert_array_equal(W[0, 2:], 0.0)
        np.testing.assert_array_equal(W[1, 2:], branch.c[1])

    def test_construction_shapes(self, branch):
        construction = build_construction(branch)
        assert construction.encodings.shape == (3, 16)
        np.testing.assert_allclose(construction.keys, np.eye(3), atol=1e-12)
        assert construction.alpha == pytest.approx(1 / 3)


class TestVerification:
    def test_assembled_network_matches_reference(self, branch):
        report = assemble_and_verify(branch, n_test=20, rng=np.random.default_rng(1))
        assert report.passed
        assert report.sup_discrepancy < 1e-8
        assert report.token_identity_error < 1e-10

    def test_zero_input_is_checked(self, branch):
        y = np.zeros((1, 1))
        out = reference_output(branch, np.zeros(3), y)
        assert out.shape == (1, 2)

    def test_strict_failure(self, branch):
        with pytest.raises(NumericalFailure, match="构造校验失败"):
            assemble_and_verify(branch, n_test=2, tolerance=0.0, strict=True)

    def test_report_format(self, branch):
        report = assemble_and_verify(branch, n_test=3)
        text = format_report(report)
        assert "result: PASS" in text
        assert "dims: m=3 n=2 p=2 d_out=2" in text
