"""
Tests for ecglens/layers.py and ecglens/model.py
"""
import numpy as np
import pytest

from ecglens.autodiff import Tensor, gradient_check, maxpool1d, relu
from ecglens.errors import CheckpointError, ShapeError
from ecglens.layers import BatchNorm1d, Conv1d, Linear, Module
from ecglens.model import (ResidualBlock, block_specs, build_network, forward_network, layer_names,
                           stage_lengths)
from ecglens.schemas import ModelConfig, ResidualBlockSpec


class TinyNet(Module):
    def __init__(self):
        super().__init__()
        rng = np.random.default_rng(0)
        self.conv = Conv1d(1, 2, 3, rng)
        self.bn = BatchNorm1d(2)
        self.fc = Linear(2, 1, rng)


class TestModule:
    """Test parameter registration and state handling"""

    def test_registration_order(self):
        """Test parameters then buffers, in assignment order"""
        names = list(TinyNet().state_dict())
        assert names == ["conv.weight", "conv.bias", "bn.gamma", "bn.beta", "fc.weight", "fc.bias",
                         "bn.running_mean", "bn.running_var"]

    def test_train_eval_propagate(self):
        """Test modes reach every sub-module"""
        net = TinyNet().eval()
        assert not net.bn.training
        net.train()
        assert net.bn.training

    def test_load_state_dict_in_place(self):
        """Test loading copies values into the existing arrays"""
        a, b = TinyNet(), TinyNet()
        state = a.state_dict()
        state["fc.bias"] = np.array([3.0])
        original = b.fc.bias.data
        b.load_state_dict(state)
        assert b.fc.bias.data is original
        assert b.fc.bias.data[0] == 3.0

    def test_load_state_dict_errors(self):
        """Test unknown names, missing names and shape mismatches"""
        net = TinyNet()
        state = net.state_dict()
        with pytest.raises(CheckpointError, match="unknown"):
            net.load_state_dict({**state, "extra.weight": np.zeros(1)})
        partial = dict(state)
        partial.pop("fc.bias")
        with pytest.raises(CheckpointError, match="missing"):
            net.load_state_dict(partial)
        with pytest.raises(ShapeError, match="fc.weight"):
            net.load_state_dict({**state, "fc.weight": np.zeros((3, 3))})


class TestArchitecture:
    """Test the residual network structure"""

    def test_default_parameter_count(self):
        """Test the full-size network's parameter count"""
        net = build_network(ModelConfig())
        assert net.num_parameters() == 8_068_105

    def test_default_stage_lengths(self):
        """Test the downsampling chain for 15000 samples"""
        assert stage_lengths(ModelConfig()) == [7500, 3749, 1875, 938, 469, 235]

    def test_reduced_stage_lengths(self):
        """Test the desk-scale configuration"""
        cfg = ModelConfig(n_leads=2, nsteps=2000, n_blocks=2, base_channels=16)
        assert stage_lengths(cfg) == [1000, 499, 250, 125]
        assert [s.out_channels for s in block_specs(cfg)] == [16, 32]

    def test_layer_names(self):
        """Test the flat layer listing starts at the stem and ends at the head"""
        names = layer_names(ModelConfig())
        assert names[:2] == ["stem.conv", "stem.bn"]
        assert names[-1] == "head.sigmoid"
        assert len(names) == 4 + 4 * 9 + 4

    def test_output_shape_and_range(self, tiny_model_config):
        """Test probabilities in (0, 1) with one column per class"""
        net = build_network(tiny_model_config)
        x = np.random.default_rng(0).normal(size=(3, 2, 32))
        probs = forward_network(net, x, mode="eval").data
        assert probs.shape == (3, 9)
        assert np.all((probs > 0) & (probs < 1))

    def test_wrong_input_shape(self, tiny_model_config):
        """Test inputs must match the configured leads and length"""
        net = build_network(tiny_model_config)
        with pytest.raises(ShapeError):
            net(np.zeros((1, 3, 32)))

    def test_too_short_nsteps(self):
        """Test a length that vanishes in the downsampling chain"""
        with pytest.raises(ShapeError):
            build_network(ModelConfig(n_leads=1, nsteps=2, n_blocks=4, base_channels=2))

    def test_even_kernel_rejected(self):
        """Test kernel sizes must be odd"""
        with pytest.raises(ValueError):
            ModelConfig(kernel_size=4)

    def test_same_seed_same_weights(self, tiny_model_config):
        """Test deterministic initialization"""
        a = build_network(tiny_model_config, seed=5).state_dict()
        b = build_network(tiny_model_config, seed=5).state_dict()
        c = build_network(tiny_model_config, seed=6).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not all(np.array_equal(a[k], c[k]) for k in a)

    def test_predict_proba_restores_mode(self, tiny_model_config):
        """Test inference runs in eval mode and restores training"""
        net = build_network(tiny_model_config)
        x = np.random.default_rng(1).normal(size=(5, 2, 32))
        probs = net.predict_proba(x, batch_size=2)
        assert net.training
        np.testing.assert_allclose(probs, forward_network(net, x, mode="eval").data)

    def test_eval_is_deterministic_with_dropout(self):
        """Test eval-mode outputs ignore dropout"""
        cfg = ModelConfig(n_leads=1, nsteps=32, kernel_size=3, base_channels=2, n_blocks=1, dropout_p=0.5)
        net = build_network(cfg)
        x = np.random.default_rng(2).normal(size=(2, 1, 32))
        np.testing.assert_array_equal(net.predict_proba(x), net.predict_proba(x))

    def test_eval_rows_independent_of_batch(self, tiny_model_config):
        """Test a record scores the same alone and among random companions in eval mode"""
        net = build_network(tiny_model_config, seed=4)
        rng = np.random.default_rng(8)
        x = rng.normal(size=(1, 2, 32))
        batch = np.concatenate([rng.normal(size=(3, 2, 32)), x, rng.normal(size=(2, 2, 32))])
        alone = forward_network(net, x, mode="eval").data[0]
        together = forward_network(net, batch, mode="eval").data[3]
        np.testing.assert_allclose(together, alone, rtol=0, atol=1e-12)


class TestResidualBlock:
    """Test the block's skip path"""

    @pytest.mark.parametrize("training", [False, True])
    def test_zeroed_bn2_leaves_shortcut(self, training):
        """Test gamma = beta = 0 on the second norm gives relu(shortcut(x)) whatever the main weights"""
        rng = np.random.default_rng(11)
        block = ResidualBlock(ResidualBlockSpec(in_channels=2, out_channels=4, stride=2, kernel_size=3,
                                                dropout_p=0.0), rng)
        block.bn2.gamma.data[:] = 0.0
        block.bn2.beta.data[:] = 0.0
        if training:
            block.train()
        else:
            block.eval()
        x = Tensor(rng.normal(size=(3, 2, 17)))
        expected = relu(maxpool1d(block.shortcut(x), 2, 2, ceil_mode=True)).data
        np.testing.assert_allclose(block(x).data, expected, atol=1e-12)

        block.conv1.weight.data[:] = rng.normal(size=block.conv1.weight.shape)
        block.conv2.weight.data[:] = rng.normal(size=block.conv2.weight.shape)
        np.testing.assert_allclose(block(x).data, expected, atol=1e-12)

    def test_identity_skip_without_shortcut(self):
        """Test a same-shape block adds its input unchanged"""
        rng = np.random.default_rng(12)
        block = ResidualBlock(ResidualBlockSpec(in_channels=3, out_channels=3, stride=1, kernel_size=3,
                                                dropout_p=0.0), rng)
        assert block.shortcut is None
        block.bn2.gamma.data[:] = 0.0
        block.bn2.beta.data[:] = 0.0
        block.eval()
        x = Tensor(rng.normal(size=(2, 3, 10)))
        np.testing.assert_allclose(block(x).data, np.maximum(x.data, 0.0), atol=1e-12)


class TestNetworkGradients:
    """Test end-to-end backpropagation through the small network"""

    def test_input_gradient(self, tiny_model_config):
        """Test the input gradient of a weighted output sum in train mode"""
        net = build_network(tiny_model_config, seed=3)
        x = np.random.default_rng(3).normal(size=(2, 2, 32))
        weights = np.random.default_rng(4).normal(size=(2, 9))
        report = gradient_check(lambda t: (net(t) * weights).sum(), x, h=1e-6, tol=1e-4)
        assert report.passed, report

    def test_parameter_gradients(self, tiny_model_config):
        """Test selected parameter gradients against central differences"""
        net = build_network(tiny_model_config, seed=3)
        x = np.random.default_rng(5).normal(size=(2, 2, 32))
        weights = np.random.default_rng(6).normal(size=(2, 9))

        def loss():
            return (net(Tensor(x)) * weights).sum()

        net.zero_grad()
        loss().backward()
        h = 1e-6
        for param in (net.stem_conv.weight, net.block0.conv2.weight, net.block1.bn1.gamma, net.fc.bias):
            for index in list(np.ndindex(param.shape))[:4]:
                original = param.data[index]
                param.data[index] = original + h
                plus = loss().item()
                param.data[index] = original - h
                minus = loss().item()
                param.data[index] = original
                numeric = (plus - minus) / (2 * h)
                analytic = param.grad[index]
                assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3) < 1e-4
