import numpy as np
import pytest
import torch

from conftest import tiny_telesto_config
from telesto.errors import ConfigError, ShapeError
from telesto.graphs import LabeledGraph
from telesto.model import Telesto, TelestoConfig, predict_proba


def tiny(seed=0, **kw):
    return Telesto(tiny_telesto_config(**kw), torch.Generator().manual_seed(seed)).double()


class TestConfig:
    def test_defaults(self):
        c = TelestoConfig()
        assert (c.hidden_dim, c.levels, c.tagcn_hops, c.gat_heads, c.jk_lstm_layers) == (64, 5, 3, 8, 7)
        assert (c.conv_filters, c.adjacency_dropout_p, c.dropout_p) == (16, 0.5, 0.5)

    def test_heads_divide_hidden(self):
        with pytest.raises(ConfigError):
            TelestoConfig(hidden_dim=10, gat_heads=4)

    @pytest.mark.parametrize("kw", [{"dropout_p": 1.0}, {"adjacency_dropout_p": -0.1}, {"levels": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TelestoConfig(**kw)


class TestForward:
    def test_default_shapes(self):
        model = Telesto(TelestoConfig()).eval()
        assert model(torch.rand(2, 7, 20)).shape == (2, 5)

    def test_dropout_changes_train_output(self, gen):
        model = tiny()
        x = torch.rand(2, 4, 6, dtype=torch.float64)
        model.train()
        assert not torch.equal(model(x, generator=gen), model(x, generator=gen))

    def test_eval_deterministic(self):
        model = tiny().eval()
        x = torch.rand(2, 4, 6, dtype=torch.float64)
        assert torch.equal(model(x), model(x))

    def test_train_generator_reproducible(self):
        model = tiny().train()
        x = torch.rand(2, 4, 6, dtype=torch.float64)
        a = model(x, generator=torch.Generator().manual_seed(1))
        b = model(x, generator=torch.Generator().manual_seed(1))
        assert torch.equal(a, b)

    def test_init_generator_reproducible(self):
        a, b = tiny(seed=5), tiny(seed=5)
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb and torch.equal(pa, pb)
        assert not torch.equal(tiny(seed=6).project.weight, a.project.weight)

    def test_any_node_count(self):
        model = tiny().eval()
        for d in (1, 2, 9, 30):
            assert model(torch.rand(3, d, 6, dtype=torch.float64)).shape == (3, 3)

    def test_node_permutation_invariant(self):
        model = tiny().eval()
        x = torch.rand(2, 6, 6, dtype=torch.float64)
        perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
        assert torch.allclose(model(x), model(x[:, perm]), atol=1e-10)

    def test_explicit_full_adjacency_is_default(self):
        model = tiny().eval()
        x = torch.rand(2, 4, 6, dtype=torch.float64)
        assert torch.equal(model(x), model(x, torch.ones(2, 4, 4, dtype=torch.float64)))

    def test_bad_rank(self):
        with pytest.raises(ShapeError):
            tiny()(torch.rand(4, 6))

    def test_wrong_window(self):
        with pytest.raises(ShapeError):
            tiny()(torch.rand(1, 4, 7, dtype=torch.float64))

    def test_gradients_reach_every_parameter(self, gen):
        model = tiny().train()
        loss = model(torch.rand(4, 3, 6, dtype=torch.float64), generator=gen).sum()
        loss.backward()
        missing = [n for n, p in model.named_parameters() if p.grad is None]
        assert missing == []


def test_predict_proba_distribution():
    model = tiny()
    g = LabeledGraph(np.random.default_rng(0).random((5, 6)), "CPU", 6)
    p = predict_proba(model, g)
    assert p.shape == (3,) and abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)
    assert model.training  # mode restored
