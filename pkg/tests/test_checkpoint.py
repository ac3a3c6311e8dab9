"""Checkpoint persistence: bit-exact round-trips and corruption handling."""

import numpy as np
import pytest

from cfalign.checkpoint import _state_arrays, load_checkpoint, save_checkpoint
from cfalign.config import RunConfig
from cfalign.data import SynthSpec, generate_dataset
from cfalign.errors import ContractError
from cfalign.evaluate import evaluate
from cfalign.train import init_state, train


@pytest.fixture(scope="module")
def tiny_data():
    spec = SynthSpec(height=12, width=12, train_images=24, eval_images=6, regions=4, seed=2)
    return generate_dataset(spec)


def trained_state(data, **overrides):
    base = dict(
        seed=2,
        iterations=25,
        hidden_dim=12,
        feature_dim=8,
        contrastive=True,
        style_transfer=True,
        head="byol",
    )
    base.update(overrides)
    state, _ = train(RunConfig(**base), data)
    return state


class TestRoundTrip:
    def test_arrays_bit_identical(self, tiny_data, tmp_path):
        state = trained_state(tiny_data)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        got = dict(_state_arrays(loaded))
        for name, want in _state_arrays(state):
            np.testing.assert_array_equal(got[name], want, err_msg=name)

    def test_evaluation_identical(self, tiny_data, tmp_path):
        state = trained_state(tiny_data)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        a = evaluate(state, tiny_data.target_eval)
        b = evaluate(loaded, tiny_data.target_eval)
        assert a == b

    def test_config_echo(self, tiny_data, tmp_path):
        state = trained_state(tiny_data, tau=0.02, threshold=0.11)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.config == state.config
        assert loaded.classes == state.classes
        assert loaded.channels == state.channels

    def test_zero_iteration_checkpoint_equals_init(self, tiny_data, tmp_path):
        config = RunConfig(seed=4, iterations=0, hidden_dim=12, feature_dim=8)
        state, _ = train(config, tiny_data)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        fresh = init_state(config, tiny_data.spec.classes, tiny_data.spec.channels)
        for (name, got), (_, want) in zip(_state_arrays(loaded), _state_arrays(fresh)):
            np.testing.assert_array_equal(got, want, err_msg=name)

    def test_style_net_round_trip(self, tiny_data, tmp_path):
        state = trained_state(tiny_data, style_net=True, style_iters=10, iterations=5)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.style is not None and loaded.style.net is not None
        np.testing.assert_array_equal(loaded.style.net.enc_w.data, state.style.net.enc_w.data)
        got_mean, got_var = loaded.style.net_stats.as_arrays()
        want_mean, want_var = state.style.net_stats.as_arrays()
        np.testing.assert_array_equal(got_mean, want_mean)
        np.testing.assert_array_equal(got_var, want_var)

    def test_bank_flags_survive(self, tiny_data, tmp_path):
        state = trained_state(tiny_data)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.bank_feat.init_source, state.bank_feat.init_source)
        np.testing.assert_array_equal(loaded.bank_feat.init_target, state.bank_feat.init_target)
        assert loaded.bank_feat.init_source.dtype == bool


class TestCorruption:
    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ContractError):
            load_checkpoint(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00\x01\x02 not a header\n")
        with pytest.raises(ContractError):
            load_checkpoint(path)

    def test_truncated_payload(self, tiny_data, tmp_path):
        state = trained_state(tiny_data, iterations=2)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        blob = path.read_bytes()
        (tmp_path / "cut.bin").write_bytes(blob[: len(blob) - 40])
        with pytest.raises(ContractError):
            load_checkpoint(tmp_path / "cut.bin")

    def test_renamed_tensor_rejected(self, tiny_data, tmp_path):
        state = trained_state(tiny_data, iterations=2)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(state, path)
        blob = path.read_bytes()
        patched = blob.replace(b"bank_feat.v_source", b"bank_feat.v_sourcX", 1)
        (tmp_path / "renamed.bin").write_bytes(patched)
        with pytest.raises(ContractError):
            load_checkpoint(tmp_path / "renamed.bin")
