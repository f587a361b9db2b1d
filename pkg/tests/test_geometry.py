import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from aliad.diffcore import grad_check
from aliad.geometry import DegenerateEmbeddingError, cosine_similarity, critic, mag_norm


class TestMagNorm:
    def test_3_4_5_vector(self):
        out = mag_norm(torch.tensor([3.0, 4.0]))
        expected = math.sqrt(2) * torch.tensor([0.6, 0.8])
        assert torch.allclose(out, expected)
        assert abs(out[0].item() - 0.84853) < 1e-5
        assert abs(out[1].item() - 1.13137) < 1e-5

    def test_c1_unit_vectors_unchanged(self):
        assert mag_norm(torch.tensor([1.0])).item() == pytest.approx(1.0)
        assert mag_norm(torch.tensor([-1.0])).item() == pytest.approx(-1.0)

    def test_idempotent(self):
        z = torch.randn(4, 7)
        once = mag_norm(z)
        assert torch.allclose(mag_norm(once), once, atol=1e-12)

    def test_degenerate_slice_errors_with_index(self):
        z = torch.ones(3, 4)
        z[1] = 0.0
        with pytest.raises(DegenerateEmbeddingError, match=r"\[1\]"):
            mag_norm(z)

    @given(st.integers(0, 10_000), st.integers(2, 32))
    @settings(max_examples=50, deadline=None)
    def test_output_norm_is_sqrt_c(self, seed, dim):
        g = torch.Generator().manual_seed(seed)
        z = torch.randn(3, dim, generator=g)
        z = z * (1e-6 / z.norm(dim=-1, keepdim=True)).clamp_min(1.0)  # norms >= 1e-6
        norms = mag_norm(z).norm(dim=-1)
        assert torch.allclose(norms, torch.full((3,), math.sqrt(dim)), atol=1e-9)

    def test_gradient(self):
        z = torch.randn(3, 5)
        assert grad_check(lambda z: mag_norm(z).square().sum(), [z]).max_relative_error < 1e-4


class TestCosineSimilarity:
    def test_identical(self):
        a = torch.randn(6)
        assert cosine_similarity(a, a).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(
            torch.tensor([1.0, 0.0]), torch.tensor([0.0, 2.0])
        ).item() == pytest.approx(0.0)

    def test_opposite(self):
        a = torch.randn(4)
        assert cosine_similarity(a, -a).item() == pytest.approx(-1.0)

    def test_zero_norm_errors(self):
        with pytest.raises(DegenerateEmbeddingError):
            cosine_similarity(torch.zeros(3), torch.ones(3))


class TestCritic:
    def test_identical_at_default_temperature(self):
        a = torch.randn(8)
        assert critic(a, a, 0.1).item() == pytest.approx(math.exp(10), rel=1e-9)
        assert critic(a, a, 0.1).item() == pytest.approx(22026.4658, rel=1e-8)

    def test_orthogonal_is_one(self):
        a = torch.tensor([1.0, 0.0, 0.0])
        b = torch.tensor([0.0, 1.0, 0.0])
        for tau in (0.05, 0.1, 1.0):
            assert critic(a, b, tau).item() == pytest.approx(1.0)

    def test_scale_invariance(self):
        a, b = torch.randn(5), torch.randn(5)
        assert critic(a, 5.0 * b, 0.1).item() == pytest.approx(critic(a, b, 0.1).item())

    def test_symmetry_exact(self):
        a, b = torch.randn(5), torch.randn(5)
        assert critic(a, b, 0.1).item() == critic(b, a, 0.1).item()

    def test_monotone_in_similarity_and_temperature(self):
        # fix vectors at increasing cosine, check critic increases
        angles = [1.2, 0.8, 0.4]
        vals = [
            critic(torch.tensor([1.0, 0.0]), torch.tensor([math.cos(t), math.sin(t)]), 0.1).item()
            for t in angles
        ]
        assert vals[0] < vals[1] < vals[2]
        # positive cosine: critic strictly decreasing in tau
        a = torch.tensor([1.0, 0.0])
        b = torch.tensor([math.cos(0.5), math.sin(0.5)])
        assert critic(a, b, 0.1).item() > critic(a, b, 0.2).item() > critic(a, b, 0.5).item()

    def test_invalid_temperature(self):
        a = torch.randn(3)
        with pytest.raises(ValueError):
            critic(a, a, 0.0)
