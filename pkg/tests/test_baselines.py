import numpy as np
import pytest
import torch

import oracles
from telesto.baselines import GCN, GIN, BaselineConfig, BaselineGNN, GCNConv, GINConv, row_normalize
from telesto.errors import ConfigError, ShapeError

D = torch.float64


def t(a):
    return torch.as_tensor(np.asarray(a), dtype=D)


class TestConfig:
    def test_default_widths(self):
        assert BaselineConfig("gcn").hidden_dim == 32
        assert BaselineConfig("gin").hidden_dim == 64

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            BaselineConfig("gat")


def test_row_normalize():
    x = t([[[2.0, 2.0], [0.2, 0.3], [0.0, 0.0]]])
    np.testing.assert_allclose(row_normalize(x)[0].numpy(), [[0.5, 0.5], [0.2, 0.3], [0.0, 0.0]])


class TestGCNConv:
    def test_matches_oracle(self, rng):
        for d in range(1, 5):
            conv = GCNConv(5, 3).double()
            with torch.no_grad():
                conv.bias.normal_()
            x = rng.normal(size=(d, 5))
            a = (rng.random((d, d)) < 0.5).astype(float)
            np.fill_diagonal(a, 0)
            a_hat = oracles.sym_norm(a + np.eye(d))
            expected = oracles.matmul(a_hat, oracles.matmul(x, conv.lin.weight.detach().numpy().T))
            expected += conv.bias.detach().numpy()
            got = conv(t(x[None]), t(a[None]))[0].detach().numpy()
            assert np.abs(got - expected).max() <= 1e-6

    def test_single_node_is_xw(self, rng):
        conv = GCNConv(4, 2).double()
        x = rng.normal(size=(1, 4))
        got = conv(t(x[None]), t([[[1.0]]]))[0].detach().numpy()
        np.testing.assert_allclose(got, x @ conv.lin.weight.detach().numpy().T, atol=1e-12)

    def test_complete_graph_averages(self, rng):
        conv = GCNConv(3, 3).double()
        with torch.no_grad():
            conv.lin.weight.copy_(torch.eye(3, dtype=D))
        x = rng.normal(size=(4, 3))
        got = conv(t(x[None]), t(np.ones((1, 4, 4))))[0].detach().numpy()
        np.testing.assert_allclose(got, np.tile(x.mean(0), (4, 1)), atol=1e-12)


class TestGINConv:
    def test_aggregate_matches_oracle(self, rng):
        conv = GINConv(4, 4).double()
        with torch.no_grad():
            conv.eps.fill_(0.3)
        for d in range(1, 5):
            x = rng.normal(size=(d, 4))
            a = (rng.random((d, d)) < 0.5).astype(float)
            got = conv.aggregate(t(x[None]), t(a[None]))[0].detach().numpy()
            assert np.abs(got - oracles.gin_aggregate(x, a, 0.3)).max() <= 1e-6

    def test_self_loop_doubles_at_zero_eps(self):
        conv = GINConv(3, 3).double()
        h = t([[[1.0, -2.0, 0.5]]])
        assert conv.aggregate(h, t([[[1.0]]])).tolist() == [[[2.0, -4.0, 1.0]]]

    def test_sum_is_injective_on_multisets(self):
        # mean aggregation cannot tell {1, 1} from {1}; sum can
        conv = GINConv(1, 1).double()
        one = conv.aggregate(t([[[1.0]]]), t([[[0.0]]]))
        two = conv.aggregate(t([[[1.0], [1.0]]]), t(np.ones((1, 2, 2))))
        assert one[0, 0, 0] != two[0, 0, 0]


class TestBaselineGNN:
    @pytest.mark.parametrize("build", [GCN, GIN])
    def test_shapes_and_node_counts(self, build):
        model = build(num_classes=4, window_size=6).double().eval()
        for d in (1, 3, 12):
            assert model(torch.rand(2, d, 6, dtype=D)).shape == (2, 4)

    @pytest.mark.parametrize("build", [GCN, GIN])
    def test_permutation_invariant(self, build):
        model = build(window_size=6).double().eval()
        x = torch.rand(3, 5, 6, dtype=D)
        assert torch.allclose(model(x), model(x[:, [4, 2, 0, 1, 3]]), atol=1e-10)

    def test_forward_by_hand(self, rng):
        # single layer, no dropout in eval: lin2(lin1(sum_i conv(x)_i))
        model = BaselineGNN(BaselineConfig("gcn", 2, 3, hidden_dim=4, num_layers=1)).double().eval()
        x = np.abs(rng.normal(size=(3, 3))) + 0.5
        xn = x / x.sum(1, keepdims=True)
        conv = model.convs[0]
        h = oracles.matmul(oracles.sym_norm(np.ones((3, 3))),
                           oracles.matmul(xn, conv.lin.weight.detach().numpy().T)) + conv.bias.detach().numpy()
        h = h.sum(0)
        h = model.lin1.weight.detach().numpy() @ h + model.lin1.bias.detach().numpy()
        h = model.lin2.weight.detach().numpy() @ h + model.lin2.bias.detach().numpy()
        np.testing.assert_allclose(model(t(x[None]))[0].detach().numpy(), h, atol=1e-10)

    def test_relu_between_layers_only(self):
        model = BaselineGNN(BaselineConfig("gcn", 2, 3, hidden_dim=4)).double().eval()
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
            model.convs[1].bias.fill_(-1.0)
            model.lin1.weight.copy_(torch.eye(4, dtype=D))
            model.lin2.weight[0].fill_(1.0)
        # a negative second-layer output survives into the head
        assert model(torch.rand(1, 2, 3, dtype=D))[0, 0] == -8.0

    def test_window_mismatch(self):
        with pytest.raises(ShapeError):
            GCN(window_size=6)(torch.rand(1, 3, 5))

    def test_dropout_in_training(self, gen):
        model = GIN(window_size=6).double().train()
        x = torch.rand(4, 3, 6, dtype=D)
        assert not torch.equal(model(x, generator=gen), model(x, generator=gen))
