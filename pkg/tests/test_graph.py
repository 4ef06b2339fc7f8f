"""Topology, initialization, forward engine, and checkpoint tests.

The forward engine schedules whole layers at a time (one drive GEMM per
layer), which is only valid because a layer consumes its producer's
previous-step spikes.  The cross-checks here pin that equivalence against
a step-major loop and against the scalar chain oracle.
"""

import filecmp

import numpy as np
import pytest

import reference_sim
from mtsnn import graph, lif
from mtsnn.checkpoint import load_checkpoint, save_checkpoint
from mtsnn.errors import CheckpointError, ConfigError, ShapeError, TopologyError
from mtsnn.graph import (
    ForwardTrace,
    LayerSpec,
    NetworkSpec,
    NetworkState,
    build_mtsnn,
    forward,
    forward_with_ext_current,
)
from mtsnn.lif import LayerState, NeuronConfig


def small_arch(n_in=6, hidden=5, latent=4, n1=3, n2=2, recurrent=False):
    return NetworkSpec(
        feature_block=[
            LayerSpec(n_in, hidden, use_recurrent=recurrent),
            LayerSpec(hidden, latent),
        ],
        label_block=[LayerSpec(latent, n1 + n2)],
        task_block=[LayerSpec(latent, 2)],
        num_labels_task1=n1,
        num_labels_task2=n2,
    )


def random_spikes(rng, t_steps, batch, n_in, p=0.3):
    return (rng.random((t_steps, batch, n_in)) < p).astype(np.float64)


class TestBuild:
    def test_same_seed_same_weights(self):
        a = build_mtsnn(small_arch(), seed=7)
        b = build_mtsnn(small_arch(), seed=7)
        for (_, _, la), (_, _, lb) in zip(a.layers_flat(), b.layers_flat()):
            assert np.array_equal(la.weights, lb.weights)

    def test_different_seed_differs(self):
        a = build_mtsnn(small_arch(), seed=7)
        b = build_mtsnn(small_arch(), seed=8)
        assert not np.array_equal(a.feature[0].weights, b.feature[0].weights)

    def test_init_range_scales_with_fan_in(self):
        net = build_mtsnn(small_arch(n_in=100, hidden=16), seed=0, init_gain=3.0)
        w = net.feature[0].weights
        k = 3.0 / np.sqrt(100)
        assert np.all(np.abs(w) <= k)
        assert w.std() > 0.2 * k  # actually spread out, not collapsed

    def test_per_block_gain(self):
        net = build_mtsnn(small_arch(n_in=100, latent=16), seed=0,
                          init_gain={"feature": 4.0, "label": 0.5, "task": 0.5})
        assert np.abs(net.feature[0].weights).max() > 3.0 / np.sqrt(100)
        assert np.abs(net.label[0].weights).max() <= 0.5 / np.sqrt(16)
        assert np.abs(net.task[0].weights).max() <= 0.5 / np.sqrt(16)

    def test_per_block_gain_requires_all_blocks(self):
        with pytest.raises(ConfigError):
            build_mtsnn(small_arch(), seed=0, init_gain={"feature": 4.0})

    def test_recurrent_only_when_requested(self):
        net = build_mtsnn(small_arch(), seed=0)
        assert all(layer.recurrent is None for _, _, layer in net.layers_flat())
        net_r = build_mtsnn(small_arch(recurrent=True), seed=0)
        assert net_r.feature[0].recurrent.shape == (5, 5)
        assert net_r.feature[1].recurrent is None

    def test_source_arch_not_mutated(self):
        arch = small_arch()
        build_mtsnn(arch, seed=0)
        assert arch.feature_block[0].weights is None

    def test_adjacency_mismatch_rejected(self):
        arch = small_arch()
        arch.feature_block[1] = LayerSpec(99, 4)
        with pytest.raises(TopologyError):
            build_mtsnn(arch, seed=0)

    def test_head_input_must_match_latent(self):
        arch = small_arch()
        arch.label_block[0] = LayerSpec(3, 5)
        with pytest.raises(TopologyError):
            build_mtsnn(arch, seed=0)

    def test_label_width_must_cover_both_segments(self):
        arch = small_arch()
        arch.num_labels_task1 = 9
        with pytest.raises(TopologyError):
            build_mtsnn(arch, seed=0)

    def test_task_head_width_fixed_at_two(self):
        arch = small_arch()
        arch.task_block[0] = LayerSpec(4, 3)
        with pytest.raises(TopologyError):
            build_mtsnn(arch, seed=0)

    def test_empty_feature_block_rejected(self):
        arch = small_arch()
        arch.feature_block = []
        with pytest.raises(TopologyError):
            build_mtsnn(arch, seed=0)

    def test_single_layer_blocks_allowed(self):
        arch = NetworkSpec(
            feature_block=[LayerSpec(4, 3)],
            label_block=[LayerSpec(3, 5)],
            task_block=[],
            num_labels_task1=3,
            num_labels_task2=2,
        )
        net = build_mtsnn(arch, seed=1)
        x = np.zeros((10, 1, 4))
        tr = forward(net, x)
        assert tr.label_output.shape == (10, 1, 5)


class TestForwardEngine:
    def test_quiescence(self):
        # no input, no external current: every trace stays exactly zero
        net = build_mtsnn(small_arch(), seed=3)
        tr = forward(net, np.zeros((20, 2, 6)), use_task_block=True)
        for trace in tr.feature + tr.label + tr.task:
            assert not trace.u.any() and not trace.i.any() and not trace.s.any()

    def test_trace_shapes_and_initial_row(self):
        net = build_mtsnn(small_arch(), seed=3)
        rng = np.random.default_rng(0)
        tr = forward(net, random_spikes(rng, 15, 4, 6), use_task_block=True)
        assert tr.feature[0].s.shape == (16, 4, 5)
        assert tr.label[0].s.shape == (16, 4, 5)
        assert tr.task[0].s.shape == (16, 4, 2)
        for trace in tr.feature + tr.label + tr.task:
            assert not trace.u[0].any() and not trace.s[0].any()
        assert tr.label_output.shape == (15, 4, 5)

    def test_forward_deterministic(self):
        net = build_mtsnn(small_arch(), seed=3)
        rng = np.random.default_rng(1)
        x = random_spikes(rng, 25, 3, 6)
        a = forward(net, x, use_task_block=True)
        b = forward(net, x, use_task_block=True)
        assert np.array_equal(a.label[-1].s, b.label[-1].s)
        assert np.array_equal(a.task[-1].u, b.task[-1].u)

    def test_chain_matches_scalar_oracle(self):
        # 1-neuron feature(2 layers) + 1-neuron label head == scalar chain
        cfg = NeuronConfig(threshold=0.9)
        spec = NetworkSpec(
            feature_block=[LayerSpec(1, 1, cfg), LayerSpec(1, 1, cfg)],
            label_block=[LayerSpec(1, 1, cfg)],
            task_block=[],
            num_labels_task1=1,
            num_labels_task2=0,
        )
        ws = [1.6, 1.3, 1.1]
        for layer, w in zip(spec.feature_block + spec.label_block, ws):
            layer.weights = np.array([[w]])
        net = NetworkState(spec=spec, seed=0, init_gain=0.0)

        rng = np.random.default_rng(42)
        train = (rng.random(60) < 0.4).astype(np.float64)
        tr = forward(net, train.reshape(1, 1, 60).transpose(2, 1, 0))
        hists = reference_sim.simulate_chain(ws, cfg.alpha, cfg.beta, 0.9, list(train))
        stages = [tr.feature[0], tr.feature[1], tr.label[0]]
        for stage, hist in zip(stages, hists):
            assert stage.s[:, 0, 0].tolist() == hist

    def test_layer_major_equals_step_major(self):
        # independent step-major loop: time outer, layers inner, each layer
        # consuming its producer's previous-step spikes
        net = build_mtsnn(small_arch(), seed=11)
        rng = np.random.default_rng(2)
        x = random_spikes(rng, 30, 3, 6)
        tr = forward(net, x)

        chain = net.feature + net.label
        states = [LayerState.zeros(sp.out_size, batch=3) for sp in chain]
        ref = [np.zeros((31, 3, sp.out_size)) for sp in chain]
        for t in range(30):
            srcs = [x[t]] + [st.s for st in states[:-1]]
            for k, sp in enumerate(chain):
                states[k] = lif.step(states[k], sp.neuron, srcs[k] @ sp.weights.T)
                ref[k][t + 1] = states[k].s
        got = tr.feature + tr.label
        for trace, expect in zip(got, ref):
            assert np.array_equal(trace.s, expect)

    def test_single_sample_matrix_input(self):
        # (features, T) input is the one-sample convenience form
        net = build_mtsnn(small_arch(), seed=5)
        rng = np.random.default_rng(3)
        dense = (rng.random((6, 12)) < 0.5).astype(np.uint8)
        a = forward(net, dense)
        b = forward(net, dense.T.astype(np.float64)[:, None, :])
        assert np.array_equal(a.label_output, b.label_output)

    def test_input_width_checked(self):
        net = build_mtsnn(small_arch(), seed=5)
        with pytest.raises(ShapeError):
            forward(net, np.zeros((10, 1, 7)))

    def test_permuting_input_features_with_columns_is_exact(self):
        # dyadic weights keep every drive sum exact, so reordering input
        # features together with first-layer columns is bit-neutral
        arch = small_arch(n_in=4, hidden=3, latent=3, n1=2, n2=1)
        net = build_mtsnn(arch, seed=9)
        rng = np.random.default_rng(4)
        for _, _, layer in net.layers_flat():
            layer.weights = rng.integers(-8, 9, size=layer.weights.shape) / 8.0
        x = random_spikes(rng, 40, 2, 4)
        perm = rng.permutation(4)

        import copy

        net2 = copy.deepcopy(net)
        net2.feature[0].weights = net.feature[0].weights[:, perm]
        a = forward(net, x, use_task_block=True)
        b = forward(net2, x[:, :, perm], use_task_block=True)
        assert np.array_equal(a.label[-1].u, b.label[-1].u)
        assert np.array_equal(a.task[-1].s, b.task[-1].s)

    def test_spike_fn_hook_replaces_threshold(self):
        net = build_mtsnn(small_arch(), seed=5)
        tr = forward(net, np.zeros((8, 1, 6)), spike_fn=lambda u, cfg: np.ones_like(u))
        assert tr.feature[0].s[1:].min() == 1.0
        assert tr.feature[0].s[0].max() == 0.0  # initial row untouched


class TestTaskControls:
    def test_threshold_override_scopes_to_feature_and_label(self):
        net = build_mtsnn(small_arch(), seed=6)
        rng = np.random.default_rng(5)
        x = random_spikes(rng, 20, 2, 6)
        tr = forward(net, x, phi_override=5.0, use_task_block=True)
        for trace in tr.feature + tr.label:
            assert trace.cfg.threshold == 5.0
        assert tr.task[0].cfg.threshold == net.task[0].neuron.threshold
        # stored configs never mutated by the per-run override
        for _, _, layer in net.layers_flat():
            assert layer.neuron.threshold == 1.25

    def test_threshold_changes_output(self):
        net = build_mtsnn(small_arch(), seed=6)
        rng = np.random.default_rng(6)
        x = random_spikes(rng, 40, 2, 6, p=0.5)
        lo = forward(net, x, phi_override=1.25).label_output.sum()
        hi = forward(net, x, phi_override=5.0).label_output.sum()
        assert lo > hi

    def test_task_block_does_not_disturb_other_blocks(self):
        net = build_mtsnn(small_arch(), seed=6)
        rng = np.random.default_rng(7)
        x = random_spikes(rng, 20, 2, 6)
        off = forward(net, x, use_task_block=False)
        on = forward(net, x, use_task_block=True)
        assert off.task is None
        assert np.array_equal(off.feature[-1].u, on.feature[-1].u)
        assert np.array_equal(off.label[-1].s, on.label[-1].s)

    def test_task_block_required_when_enabled(self):
        arch = small_arch()
        arch.task_block = []
        net = build_mtsnn(arch, seed=0)
        with pytest.raises(TopologyError):
            forward(net, np.zeros((5, 1, 6)), use_task_block=True)

    def test_ext_current_zero_is_plain_forward(self):
        net = build_mtsnn(small_arch(), seed=6)
        rng = np.random.default_rng(8)
        x = random_spikes(rng, 20, 2, 6)
        a = forward(net, x)
        b = forward_with_ext_current(net, x, i_ext_override=0.0)
        assert np.array_equal(a.label[-1].u, b.label[-1].u)
        assert np.array_equal(a.feature[0].i, b.feature[0].i)

    def test_ext_current_geometric_series(self):
        # zero weights, zero input: I[n] = i_ext*(1-beta^n)/(1-beta)
        arch = NetworkSpec(
            feature_block=[LayerSpec(1, 1, NeuronConfig(threshold=10.0))],
            label_block=[LayerSpec(1, 1, NeuronConfig(threshold=10.0))],
            task_block=[LayerSpec(1, 2, NeuronConfig(threshold=10.0))],
            num_labels_task1=1,
            num_labels_task2=0,
        )
        net = build_mtsnn(arch, seed=0)
        for _, _, layer in net.layers_flat():
            layer.weights = np.zeros_like(layer.weights)
        tr = forward_with_ext_current(net, np.zeros((80, 1, 1)), 0.05, use_task_block=True)
        beta = net.feature[0].neuron.beta
        n = np.arange(81)
        expect = 0.05 * (1 - beta**n) / (1 - beta)
        assert np.allclose(tr.feature[0].i[:, 0, 0], expect, rtol=0, atol=1e-12)
        # plateau from below, never beyond the limit
        assert np.all(np.diff(tr.feature[0].i[:, 0, 0]) >= 0)
        assert tr.feature[0].i[-1, 0, 0] < 0.05 / (1 - beta)
        # the task block must not receive the override current
        assert not tr.task[0].i.any()

    def test_ext_current_raises_firing(self):
        arch = NetworkSpec(
            feature_block=[LayerSpec(1, 1)],
            label_block=[LayerSpec(1, 1)],
            task_block=[],
            num_labels_task1=1,
            num_labels_task2=0,
        )
        net = build_mtsnn(arch, seed=0)
        for _, _, layer in net.layers_flat():
            layer.weights = np.zeros_like(layer.weights)
        x = np.zeros((80, 1, 1))
        counts = [
            forward_with_ext_current(net, x, i).feature[0].s.sum()
            for i in (0.0, 0.05, 0.1, 0.3)
        ]
        assert counts == sorted(counts) and counts[0] < counts[-1]


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        arch = small_arch(recurrent=True)
        arch.label_block[0].neuron = NeuronConfig(threshold=5.0, tau_syn=3.0)
        net = build_mtsnn(arch, seed=12, init_gain=2.5)
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, net)
        back = load_checkpoint(p)
        assert back.seed == 12 and back.init_gain == 2.5
        for (_, _, la), (_, _, lb) in zip(net.layers_flat(), back.layers_flat()):
            assert np.array_equal(la.weights, lb.weights)
            assert (la.recurrent is None) == (lb.recurrent is None)
            if la.recurrent is not None:
                assert np.array_equal(la.recurrent, lb.recurrent)
            assert la.neuron == lb.neuron

    def test_round_trip_dict_gain(self, tmp_path):
        gain = {"feature": 4.0, "label": 0.5, "task": 0.5}
        net = build_mtsnn(small_arch(), seed=3, init_gain=gain)
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, net)
        assert load_checkpoint(p).init_gain == gain

    def test_resave_is_byte_identical(self, tmp_path):
        net = build_mtsnn(small_arch(), seed=12)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, net)
        save_checkpoint(p2, load_checkpoint(p1))
        assert filecmp.cmp(p1, p2, shallow=False)

    def test_round_trip_forward_identical(self, tmp_path):
        net = build_mtsnn(small_arch(), seed=13)
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, net)
        back = load_checkpoint(p)
        rng = np.random.default_rng(9)
        x = random_spikes(rng, 20, 2, 6)
        assert np.array_equal(
            forward(net, x).label_output, forward(back, x).label_output
        )

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, build_mtsnn(small_arch(), seed=0))
        raw = bytearray(p.read_bytes())
        raw[0] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_unknown_version_rejected(self, tmp_path):
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, build_mtsnn(small_arch(), seed=0))
        raw = bytearray(p.read_bytes())
        raw[8:12] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, build_mtsnn(small_arch(), seed=0))
        p.write_bytes(p.read_bytes()[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)

    def test_unbuilt_network_rejected(self, tmp_path):
        net = NetworkState(spec=small_arch(), seed=0, init_gain=1.0)
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "x.ckpt", net)
