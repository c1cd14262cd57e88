# Third Party Imports
import pytest
import torch

# Local Imports
from core.errors import DimensionError
from core.nets import Autoencoder, CommittorNet, committor_widths


def test_layer_count_convention() -> None:
    assert committor_widths(10, 100, 4) == [10, 100, 100, 100, 1]


def test_output_lies_in_unit_interval(gen: torch.Generator) -> None:
    net = CommittorNet(committor_widths(3, 16, 3), generator=gen)
    x = 10 * torch.randn(256, 3, generator=gen, dtype=torch.float64)
    q = net(x)
    assert q.shape == (256,)
    assert bool(((q > 0) & (q < 1)).all())


def test_zero_output_layer_gives_one_half() -> None:
    net = CommittorNet([2, 8, 1], zero_output=True)
    q = net(torch.tensor([[0.3, -1.0], [5.0, 2.0]], dtype=torch.float64))
    assert torch.equal(q, torch.full((2,), 0.5, dtype=torch.float64))


def test_wrong_input_dimension_is_rejected(gen: torch.Generator) -> None:
    net = CommittorNet([4, 8, 1], generator=gen)
    with pytest.raises(DimensionError) as info:
        net(torch.zeros(2, 3, dtype=torch.float64))
    assert info.value.expected == 4
    assert info.value.got == 3


def test_input_gradient_matches_finite_differences(gen: torch.Generator) -> None:
    net = CommittorNet([2, 12, 12, 1], "tanh2", generator=gen)
    x = torch.tensor([[0.2, -0.4]], dtype=torch.float64)
    g = net.input_gradient(x, create_graph=False)
    h = 1e-6
    for i in range(2):
        e = torch.zeros_like(x)
        e[0, i] = h
        with torch.no_grad():
            fd = (net(x + e) - net(x - e)) / (2 * h)
        assert float(g[0, i]) == pytest.approx(float(fd[0]), rel=1e-6, abs=1e-10)


def test_same_generator_seed_gives_same_weights() -> None:
    a = CommittorNet([3, 5, 1], generator=torch.Generator().manual_seed(1))
    b = CommittorNet([3, 5, 1], generator=torch.Generator().manual_seed(1))
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_widths_must_end_in_one() -> None:
    with pytest.raises(ValueError):
        CommittorNet([3, 5, 2])


def test_autoencoder_shapes(gen: torch.Generator) -> None:
    ae = Autoencoder([6, 8, 2], [2, 8, 6], generator=gen)
    x = torch.randn(5, 6, generator=gen, dtype=torch.float64)
    assert ae.encode(x).shape == (5, 2)
    assert ae(x).shape == (5, 6)
    assert ae.latent_dim == 2 and ae.input_dim == 6


def test_autoencoder_rejects_mismatched_widths() -> None:
    with pytest.raises(ValueError):
        Autoencoder([6, 8, 2], [3, 8, 6])
    with pytest.raises(ValueError):
        Autoencoder([6, 8, 2], [2, 8, 5])


def test_linear_autoencoder_is_affine(gen: torch.Generator) -> None:
    ae = Autoencoder([3, 4, 2], [2, 4, 3], "linear", generator=gen)
    x = torch.randn(2, 3, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        mid = ae(0.5 * (x[:1] + x[1:]))
        avg = 0.5 * (ae(x[:1]) + ae(x[1:]))
    assert torch.allclose(mid, avg, atol=1e-12)
