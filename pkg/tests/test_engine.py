"""Round loop: selection, local training, aggregation, warmup, freezing."""

import numpy as np
import pytest

from fedwarm import rng
from fedwarm.data import (
    ClientPartition,
    PartitionSpec,
    build_warmup_buffer,
    generate_synthetic,
    partition_unique_label,
)
from fedwarm.engine import (
    ClientUpdate,
    Hyperparams,
    TransferConfig,
    aggregate_fedavg,
    batch_slices,
    run_centralized,
    run_federated,
    select_participants,
    train_user,
    train_warmup,
)
from fedwarm.errors import AggregationError, ConfigError, ContractError, RoundError
from fedwarm.metrics import accuracy
from fedwarm.nn import (
    Batch,
    Dense,
    ModelSpec,
    ModelWeights,
    Relu,
    forward,
    frozen_region,
    init_weights,
    predict,
    softmax_cross_entropy,
)


def blob_setup(num_classes=3, spc=40, seed=5, warmup=0.0):
    ds = generate_synthetic(num_classes, spc, (6,), 3.0, seed=seed)
    parts = partition_unique_label(
        ds, PartitionSpec(num_classes, 15, 25, warmup, seed=seed)
    )
    spec = ModelSpec((Dense(6, 8), Relu(), Dense(8, num_classes)), (6,), num_classes)
    return ds, parts, spec


def hp(**kw):
    base = dict(lr=0.1, batch_size=8, local_epochs=1, rounds=3,
                participation_fraction=1.0, seed=0)
    base.update(kw)
    return Hyperparams(**base)


# ---------------------------------------------------------------------------
# hyperparams / transfer config validation


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        hp(lr=-0.1)
    with pytest.raises(ConfigError):
        hp(batch_size=0)
    with pytest.raises(ConfigError):
        hp(rounds=0)
    with pytest.raises(ConfigError):
        hp(participation_fraction=0.0)
    with pytest.raises(ConfigError):
        hp(participation_fraction=1.5)
    assert hp(lr=0.0).lr == 0.0  # explicitly allowed


def test_transfer_config_validation():
    with pytest.raises(ConfigError):
        TransferConfig(mode="bogus")
    with pytest.raises(ConfigError):
        TransferConfig(mode="warmup_scratch", warmup_epochs=0)
    with pytest.raises(ConfigError):
        TransferConfig(mode="warmup_pretrained", warmup_epochs=3)
    TransferConfig(mode="warmup_pretrained", warmup_epochs=3,
                   pretrain_label_split=(2, 3))


# ---------------------------------------------------------------------------
# batching and selection


def test_batch_slices_covers_with_short_tail():
    slices = batch_slices(95, 10)
    assert len(slices) == 10
    assert slices[-1] == slice(90, 95)
    covered = np.concatenate([np.arange(s.start, s.stop) for s in slices])
    assert np.array_equal(covered, np.arange(95))


def test_select_participants_count_rule():
    assert len(select_participants(10, 0.2, 1, 0)) == 2
    assert select_participants(10, 1.0, 1, 0) == tuple(range(10))
    assert len(select_participants(10, 0.05, 1, 0)) == 1  # never empty
    assert len(select_participants(3, 0.5, 1, 0)) == 2    # round half up


def test_select_participants_deterministic_per_round():
    a = select_participants(10, 0.3, 4, 7)
    b = select_participants(10, 0.3, 4, 7)
    assert a == b
    across = {select_participants(10, 0.3, r, 7) for r in range(1, 40)}
    assert len(across) > 1
    assert all(list(s) == sorted(set(s)) for s in across)


def test_select_participants_validation():
    with pytest.raises(ConfigError):
        select_participants(0, 0.5, 1, 0)
    with pytest.raises(ConfigError):
        select_participants(5, 0.0, 1, 0)
    with pytest.raises(ConfigError):
        select_participants(5, 0.5, 0, 0)


# ---------------------------------------------------------------------------
# local training


def test_train_user_keeps_global_weights_intact():
    ds, parts, spec = blob_setup()
    w0 = init_weights(spec, 1)
    snapshot = w0.params.copy()
    update = train_user(parts[0], w0, ds, spec, hp(), round_index=1)
    assert np.array_equal(w0.params, snapshot)
    assert update.client_id == parts[0].client_id
    assert update.sample_count == parts[0].train_indices.size
    assert not np.array_equal(update.weights.params, w0.params)


def test_train_user_zero_lr_returns_global_weights():
    ds, parts, spec = blob_setup()
    w0 = init_weights(spec, 1)
    update = train_user(parts[0], w0, ds, spec, hp(lr=0.0), round_index=1)
    assert np.array_equal(update.weights.params, w0.params)


def test_train_user_deterministic_in_round_and_client():
    ds, parts, spec = blob_setup()
    w0 = init_weights(spec, 1)
    a = train_user(parts[0], w0, ds, spec, hp(), round_index=2)
    b = train_user(parts[0], w0, ds, spec, hp(), round_index=2)
    c = train_user(parts[0], w0, ds, spec, hp(), round_index=3)
    assert np.array_equal(a.weights.params, b.weights.params)
    assert not np.array_equal(a.weights.params, c.weights.params)


def test_train_user_rejects_empty_client():
    ds, parts, spec = blob_setup()
    empty = ClientPartition(0, 0, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    with pytest.raises(ContractError):
        train_user(empty, init_weights(spec, 1), ds, spec, hp(), round_index=1)


def test_epoch_loss_non_increasing_on_separable_blobs():
    ds = generate_synthetic(2, 60, (4,), 4.0, seed=9)
    spec = ModelSpec((Dense(4, 6), Relu(), Dense(6, 2)), (4,), 2)
    client = ClientPartition(0, 0, np.arange(ds.train_labels.shape[0]), np.empty(0, dtype=np.int64))

    def full_loss(w):
        logits, _ = forward(spec, w, Batch(ds.train_inputs, ds.train_labels))
        loss, _ = softmax_cross_entropy(logits, ds.train_labels)
        return loss

    # a two-class client that owns both labels: plain SGD must descend
    clientless = ClientPartition(0, 0, np.arange(ds.train_labels.shape[0]),
                                 np.empty(0, dtype=np.int64))
    w = init_weights(spec, 3)
    losses = [full_loss(w)]
    for r in range(1, 16):
        w = train_user(clientless, w, ds, spec, hp(lr=0.05, batch_size=8), r).weights
        losses.append(full_loss(w))
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.5 * losses[0]


# ---------------------------------------------------------------------------
# aggregation


def make_weights(values):
    arr = np.asarray(values, dtype=np.float32)
    return ModelWeights(arr, (0,), 0)


def test_aggregate_hand_example():
    updates = [
        ClientUpdate(0, make_weights([1.0]), 1),
        ClientUpdate(1, make_weights([5.0]), 3),
    ]
    out = aggregate_fedavg(updates)
    assert out.params[0] == pytest.approx(4.0)


def test_aggregate_single_update_is_identity():
    w = make_weights([1.5, -2.5, 0.25])
    out = aggregate_fedavg([ClientUpdate(0, w, 7)])
    assert np.array_equal(out.params, w.params)


def test_aggregate_identical_updates_is_identity():
    w = make_weights([0.1, 0.2, -0.3, 7.0])
    out = aggregate_fedavg([ClientUpdate(0, w, 5), ClientUpdate(1, w.copy(), 5)])
    assert np.array_equal(out.params, w.params)


def test_aggregate_matches_scalar_loop_oracle():
    gen = rng.stream(77, 0)
    for _ in range(10):
        k = int(gen.integers(2, 6))
        n = int(gen.integers(3, 30))
        updates = []
        for cid in range(k):
            params = gen.standard_normal(n).astype(np.float32)
            updates.append(ClientUpdate(cid, make_weights(params), int(gen.integers(1, 50))))
        out = aggregate_fedavg(updates)
        total = sum(u.sample_count for u in updates)
        for i in range(n):
            ref = 0.0
            for u in updates:
                ref += (u.sample_count / total) * float(u.weights.params[i])
            assert out.params[i] == pytest.approx(ref, abs=1e-6)


def test_aggregate_permutation_invariant():
    gen = rng.stream(78, 0)
    updates = [
        ClientUpdate(cid, make_weights(gen.standard_normal(20).astype(np.float32)),
                     int(gen.integers(1, 9)))
        for cid in range(5)
    ]
    a = aggregate_fedavg(updates)
    b = aggregate_fedavg(updates[::-1])
    np.testing.assert_allclose(a.params, b.params, atol=1e-6)


def test_aggregate_is_convex_combination():
    gen = rng.stream(79, 0)
    updates = [
        ClientUpdate(cid, make_weights(gen.standard_normal(30).astype(np.float32)),
                     int(gen.integers(1, 9)))
        for cid in range(4)
    ]
    out = aggregate_fedavg(updates)
    stack = np.stack([u.weights.params for u in updates])
    assert np.all(out.params >= stack.min(axis=0) - 1e-6)
    assert np.all(out.params <= stack.max(axis=0) + 1e-6)


def test_aggregate_errors_name_clients():
    a = ClientUpdate(3, make_weights([1.0, 2.0]), 1)
    b = ClientUpdate(9, ModelWeights(np.zeros(3, dtype=np.float32), (0,), 0), 1)
    with pytest.raises(AggregationError, match="3 and 9"):
        aggregate_fedavg([a, b])
    with pytest.raises(ContractError):
        aggregate_fedavg([])
    c = ClientUpdate(4, ModelWeights(np.zeros(2, dtype=np.float32), (0,), 1), 1)
    with pytest.raises(AggregationError, match="frozen_prefix"):
        aggregate_fedavg([a, c])


def test_aggregate_rejects_tampered_frozen_slice():
    spec = ModelSpec((Dense(2, 2), Relu(), Dense(2, 2)), (2,), 2)
    w = init_weights(spec, 0)
    frozen = ModelWeights(w.params.copy(), w.layer_offsets, 1)
    tampered = frozen.copy()
    tampered.params[0] += 1.0
    with pytest.raises(AggregationError, match="frozen"):
        aggregate_fedavg([
            ClientUpdate(0, frozen, 1),
            ClientUpdate(1, tampered, 1),
        ])


# ---------------------------------------------------------------------------
# warmup


def test_train_warmup_none_is_plain_init():
    _, _, spec = blob_setup()
    buffer = (np.empty((0, 6), dtype=np.float32), np.empty(0, dtype=np.int64))
    w = train_warmup(buffer, spec, TransferConfig("none"), hp(seed=11))
    assert np.array_equal(w.params, init_weights(spec, 11).params)
    assert w.frozen_prefix == 0


def test_train_warmup_scratch_beats_random_init():
    ds, parts, spec = blob_setup(spc=80, warmup=0.3)
    buffer = build_warmup_buffer(ds, parts)
    cfg = TransferConfig("warmup_scratch", 0, warmup_epochs=25)
    w = train_warmup(buffer, spec, cfg, hp(seed=2), dataset=ds)
    base = init_weights(spec, 2)
    warm_acc = accuracy(predict(spec, w, ds.test_inputs), ds.test_labels)
    base_acc = accuracy(predict(spec, base, ds.test_inputs), ds.test_labels)
    assert warm_acc > base_acc


def test_train_warmup_scratch_requires_buffer_rows():
    _, _, spec = blob_setup()
    buffer = (np.empty((0, 6), dtype=np.float32), np.empty(0, dtype=np.int64))
    with pytest.raises(ContractError, match="warmup buffer"):
        train_warmup(buffer, spec, TransferConfig("warmup_scratch", 0, 5), hp())


def test_train_warmup_freeze_count_bounds():
    _, _, spec = blob_setup()  # 2 parameterized layers
    buffer = (np.empty((0, 6), dtype=np.float32), np.empty(0, dtype=np.int64))
    with pytest.raises(ConfigError, match="nothing to train"):
        train_warmup(buffer, spec, TransferConfig("none", freeze_layer_count=2), hp())


def test_train_warmup_pretrained_copies_features_keeps_fresh_tail():
    ds = generate_synthetic(6, 60, (6,), 3.0, seed=13)
    parts = partition_unique_label(ds, PartitionSpec(3, 15, 25, 0.3, seed=13))
    spec = ModelSpec((Dense(6, 8), Relu(), Dense(8, 6)), (6,), 6)
    buffer = build_warmup_buffer(ds, parts)
    cfg = TransferConfig("warmup_pretrained", freeze_layer_count=1,
                         warmup_epochs=4, pretrain_label_split=(3, 4, 5))
    w = train_warmup(buffer, spec, cfg, hp(seed=13), dataset=ds)
    assert w.frozen_prefix == 1

    # frozen feature layer must differ from the task init (it was pretrained)
    init = init_weights(spec, 13)
    region = frozen_region(w)
    assert not np.array_equal(w.params[region], init.params[region])


def test_train_warmup_pretrained_needs_dataset():
    ds, parts, spec = blob_setup(warmup=0.3)
    buffer = build_warmup_buffer(ds, parts)
    cfg = TransferConfig("warmup_pretrained", 1, 2, pretrain_label_split=(1,))
    with pytest.raises(ContractError, match="dataset"):
        train_warmup(buffer, spec, cfg, hp())


# ---------------------------------------------------------------------------
# full runs


def test_zero_lr_round_is_fixed_point():
    ds, parts, spec = blob_setup()
    logs_w0 = []
    captured = []
    logs = run_federated(ds, parts, spec, TransferConfig("none"),
                         hp(lr=0.0, rounds=1),
                         round_hook=lambda r, ups, w: captured.append(w))
    w0 = init_weights(spec, 0)
    assert np.array_equal(captured[0].params, w0.params)
    assert len(logs) == 1


def test_round_log_contents():
    ds, parts, spec = blob_setup()
    logs = run_federated(ds, parts, spec, TransferConfig("none"), hp(rounds=2))
    assert [l.round_index for l in logs] == [1, 2]
    for log in logs:
        assert log.mode == "fedavg"
        assert set(log.client_accuracies) == {0, 1, 2}
        assert log.selected_clients == (0, 1, 2)
        assert set(log.divergence) == {0, 1, 2}
        expected_avg = np.mean(list(log.client_accuracies.values()))
        assert log.avg_accuracy == pytest.approx(expected_avg)
        assert 0.0 <= log.global_accuracy <= 1.0


def test_run_federated_workers_do_not_change_results():
    ds, parts, spec = blob_setup(num_classes=4)
    kw = dict(transfer=TransferConfig("none"), hp=hp(rounds=4, participation_fraction=0.5))
    seq = run_federated(ds, parts, spec, kw["transfer"], kw["hp"], workers=1)
    par = run_federated(ds, parts, spec, kw["transfer"], kw["hp"], workers=4)
    for a, b in zip(seq, par):
        assert a.global_accuracy == b.global_accuracy
        assert a.selected_clients == b.selected_clients
        assert a.divergence == b.divergence


def test_run_federated_learns_with_full_participation():
    ds, parts, spec = blob_setup(spc=80)
    logs = run_federated(ds, parts, spec, TransferConfig("none"),
                         hp(rounds=40, lr=0.1))
    assert logs[-1].global_accuracy >= 0.85


def test_run_federated_wraps_failures_with_round_index():
    ds, parts, spec = blob_setup()
    bad = [ClientPartition(p.client_id, p.label,
                           p.train_indices if p.client_id else np.empty(0, dtype=np.int64),
                           p.warmup_indices) for p in parts]
    with pytest.raises(RoundError) as err:
        run_federated(ds, bad, spec, TransferConfig("none"), hp())
    assert err.value.round_index == 1


def test_run_federated_rejects_duplicate_client_ids():
    ds, parts, spec = blob_setup()
    dupes = [parts[0], parts[0], parts[2]]
    with pytest.raises(ContractError, match="duplicate"):
        run_federated(ds, dupes, spec, TransferConfig("none"), hp())


def test_frozen_prefix_survives_a_full_run():
    ds, parts, spec = blob_setup(warmup=0.25)
    cfg = TransferConfig("warmup_scratch", freeze_layer_count=1, warmup_epochs=5)
    seen = []
    logs = run_federated(ds, parts, spec, cfg, hp(rounds=4),
                         round_hook=lambda r, ups, w: seen.append((ups, w)))
    first_region = None
    w0_frozen = None
    for ups, w in seen:
        region = frozen_region(w)
        if w0_frozen is None:
            first_region = region
            w0_frozen = w.params[region].copy()
        assert region == first_region
        assert np.array_equal(w.params[region], w0_frozen)
        for u in ups:
            assert np.array_equal(u.weights.params[region], w0_frozen)


def test_run_centralized_pools_everything():
    ds, parts, spec = blob_setup(spc=60, warmup=0.2)
    logs = run_centralized(ds, parts, spec, hp(rounds=10, lr=0.05))
    assert [l.round_index for l in logs] == list(range(1, 11))
    assert all(l.mode == "centralized" for l in logs)
    assert all(l.selected_clients == (0, 1, 2) for l in logs)
    assert all(l.mean_divergence == 0.0 for l in logs)
    assert logs[-1].global_accuracy >= 0.95  # separable blobs converge fast


def test_run_centralized_beats_chance_quickly_on_blobs():
    ds, parts, spec = blob_setup(num_classes=2, spc=60)
    logs = run_centralized(ds, parts, spec, hp(rounds=20, lr=0.05))
    assert logs[-1].global_accuracy >= 0.99


def test_warmup_round_one_beats_plain_start():
    # shared-buffer bootstrap vs cold start, same seed, one round
    ds, parts, spec = blob_setup(spc=100, warmup=0.2)
    h = hp(rounds=1, lr=0.05)
    cold = run_federated(ds, parts, spec, TransferConfig("none"), h)
    warm = run_federated(ds, parts, spec,
                         TransferConfig("warmup_scratch", 0, warmup_epochs=20), h)
    assert warm[0].global_accuracy > cold[0].global_accuracy
