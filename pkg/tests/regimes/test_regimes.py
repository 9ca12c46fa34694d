import importlib

import numpy as np
import pytest

from SSDN_Lab.engine import Tape
from SSDN_Lab.errors import ContractViolation
from SSDN_Lab.nn import BRIDGE_DATA, ENCODER_SHARED, MAIN_HEAD, SS_HEAD, SGDState
from SSDN_Lab.regimes import (
    DEFAULT_UPDATE_GROUPS,
    Metrics,
    RegimeKind,
    TrainConfig,
    TTTConfig,
    TTTMode,
    evaluate,
    joint_train,
    rotation_error,
    train_standard,
    ttt_adapt,
)
from SSDN_Lab.shifts import CorruptionSpec, ImageDataset, corrupt_dataset, to_inputs
from SSDN_Lab.ssdn import BridgeConfig, build_model, forward_main
from tests.conftest import TINY_ARCH, perturb

evaluate_module = importlib.import_module("SSDN_Lab.regimes.evaluate")
ttt_module = importlib.import_module("SSDN_Lab.regimes.ttt")

SMALL_TRAIN = TrainConfig(batch_size=8, lr=0.05)


@pytest.fixture(scope="module")
def trained_model(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig(), seed=0, dtype=np.float64)
    joint_train(model, tiny_dataset, epochs=2, seed=0, config=SMALL_TRAIN)
    yield model


@pytest.fixture
def sample(tiny_dataset) -> np.ndarray:
    yield to_inputs(tiny_dataset.images[0], np.float64)


# Joint training
def test_joint_train_steps(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig(), seed=0, dtype=np.float64)
    metrics = joint_train(model, tiny_dataset, epochs=2, seed=0, config=SMALL_TRAIN)
    assert len(metrics.losses) == 4
    assert len(metrics.main_losses) == len(metrics.ss_losses) == 4
    np.testing.assert_allclose(metrics.losses, np.add(metrics.main_losses, metrics.ss_losses))
    assert 0.0 <= metrics.main_error_percent <= 100.0


def test_joint_train_max_steps(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig.shared(), seed=0, dtype=np.float64)
    config = TrainConfig(batch_size=4, max_steps=3)
    assert len(joint_train(model, tiny_dataset, epochs=5, seed=0, config=config).losses) == 3


def test_joint_train_is_deterministic(tiny_dataset):
    a = build_model(TINY_ARCH, BridgeConfig(), seed=2, dtype=np.float64)
    b = build_model(TINY_ARCH, BridgeConfig(), seed=2, dtype=np.float64)
    joint_train(a, tiny_dataset, epochs=1, seed=9, config=SMALL_TRAIN)
    joint_train(b, tiny_dataset, epochs=1, seed=9, config=SMALL_TRAIN)
    assert a.registry.equals(b.registry)


def test_joint_train_moves_every_group(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig(), seed=0, dtype=np.float64)
    before = model.registry.copy()
    joint_train(model, tiny_dataset, epochs=1, seed=0, config=SMALL_TRAIN)
    for name in ("c0.weight", "g1.b0.conv1.alpha_d", "ss.alpha.weight", "ss.rot.bias", "main.fc.bias"):
        assert not np.array_equal(model.registry[name], before[name]), name


def test_joint_train_zero_epochs(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig.shared(), seed=0)
    before = model.registry.copy()
    assert joint_train(model, tiny_dataset, epochs=0, seed=0).empty
    assert model.registry.equals(before)


def test_joint_train_empty_dataset():
    empty = ImageDataset(np.zeros((0, 3, 8, 8), dtype=np.uint8), np.zeros(0), "empty", 4)
    with pytest.raises(ContractViolation):
        joint_train(build_model(TINY_ARCH, BridgeConfig.shared()), empty, epochs=1, seed=0)


def test_train_standard_has_no_rotation_loss(tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig.shared(), seed=0, dtype=np.float64)
    metrics = train_standard(model, tiny_dataset, epochs=1, seed=0, config=SMALL_TRAIN)
    assert metrics.ss_losses == [0.0, 0.0]
    assert metrics.losses == metrics.main_losses


@pytest.mark.parametrize(
    "changes", [{"batch_size": 0}, {"lr": 0.0}, {"lambda_ss": -1.0}, {"max_steps": -1}]
)
def test_train_config_validation(changes):
    with pytest.raises(ContractViolation):
        TrainConfig(**changes)


# Test-time training
def test_single_mode_restores_parameters_and_buffers(trained_model, sample):
    model = trained_model.clone()
    before = model.registry.copy()
    state = SGDState(lr=0.01, momentum=0.9, weight_decay=5e-4)
    state.buffers["c0.weight"] = np.full_like(model.registry["c0.weight"], 0.125)
    result = ttt_adapt(model, sample, TTTConfig(K=4, lr=0.01, momentum=0.9, weight_decay=5e-4), state)
    assert len(result.ss_losses) == 5
    assert model.registry.equals(before)
    assert np.array_equal(state.buffers["c0.weight"], np.full_like(before["c0.weight"], 0.125))
    assert set(state.buffers) == {"c0.weight"}


def test_zero_steps_equals_inference(trained_model, sample):
    model = trained_model.clone()
    result = ttt_adapt(model, sample, TTTConfig(K=0))
    expected = forward_main(model, Tape(np.float64).leaf(sample[None])).value[0]
    assert np.array_equal(result.logits, expected)
    assert result.prediction == int(np.argmax(expected))
    assert result.initial_ss_loss == result.final_ss_loss


def test_online_mode_keeps_updates(trained_model, sample):
    model = trained_model.clone()
    before = model.registry.copy()
    ttt_adapt(model, sample, TTTConfig(K=2, lr=0.01, mode=TTTMode.ONLINE))
    assert not np.array_equal(model.registry["c0.weight"], before["c0.weight"])
    assert not np.array_equal(model.registry["ss.rot.weight"], before["ss.rot.weight"])
    # groups outside the update set never move
    for name in model.registry.names([MAIN_HEAD, BRIDGE_DATA]):
        assert np.array_equal(model.registry[name], before[name]), name


def test_adaptation_lowers_rotation_loss_on_shifted_data(trained_model, tiny_dataset):
    shifted = corrupt_dataset(tiny_dataset.subset(range(12)), CorruptionSpec("gaussian_noise", 3))
    inputs = to_inputs(shifted.images, np.float64)
    model = trained_model.clone()
    results = [ttt_adapt(model, x, TTTConfig(K=16)) for x in inputs]
    lowered = sum(r.final_ss_loss <= r.initial_ss_loss for r in results)
    assert lowered >= 0.95 * len(inputs)
    assert model.registry.equals(trained_model.registry)


def test_single_mode_restores_after_a_failed_step(mocker, trained_model, sample):
    model = trained_model.clone()
    before = model.registry.copy()
    real_step = ttt_module.sgd_step
    calls = []

    def failing_step(*args, **kwargs):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("step failed")
        real_step(*args, **kwargs)

    mocker.patch.object(ttt_module, "sgd_step", side_effect=failing_step)
    with pytest.raises(RuntimeError):
        ttt_adapt(model, sample, TTTConfig(K=4, lr=0.01))
    assert len(calls) == 3
    assert model.registry.equals(before)


def test_single_mode_restores_after_a_failed_prediction(mocker, trained_model, sample):
    model = trained_model.clone()
    before = model.registry.copy()
    mocker.patch.object(ttt_module, "forward_main", side_effect=RuntimeError("prediction failed"))
    with pytest.raises(RuntimeError):
        ttt_adapt(model, sample, TTTConfig(K=2, lr=0.01))
    assert model.registry.equals(before)


def test_inner_loop_never_reaches_alpha_d(mocker, trained_model, sample):
    model = trained_model.clone()
    before = model.registry.copy()
    step = mocker.spy(ttt_module, "sgd_step")
    cfg = TTTConfig(K=3, lr=0.01, update_groups=DEFAULT_UPDATE_GROUPS + (BRIDGE_DATA,), mode=TTTMode.ONLINE)
    ttt_adapt(model, sample, cfg)
    alpha_names = model.registry.names([BRIDGE_DATA])
    assert alpha_names and step.call_count == 3
    for call in step.call_args_list:
        grads = call.args[1]
        for name in alpha_names:
            assert name not in grads or not np.any(grads[name]), name
    # selected but gradient-free, without momentum or decay: bitwise unchanged
    for name in alpha_names:
        assert np.array_equal(model.registry[name], before[name]), name
    assert not np.array_equal(model.registry["c0.weight"], before["c0.weight"])


@pytest.mark.parametrize(
    "changes",
    [{"K": -1}, {"K": 1.5}, {"lr": 0.0}, {"update_groups": ("encoder_main",)}, {"mode": "Batch"}],
)
def test_ttt_config_validation(changes):
    with pytest.raises((ContractViolation, ValueError)):
        TTTConfig(**changes)


def test_ttt_config_defaults_and_round_trip():
    cfg = TTTConfig()
    assert cfg.K == 16 and cfg.lr == 0.001 and cfg.mode == TTTMode.SINGLE
    assert cfg.update_groups == DEFAULT_UPDATE_GROUPS
    assert ENCODER_SHARED in cfg.update_groups and SS_HEAD in cfg.update_groups
    assert MAIN_HEAD not in cfg.update_groups
    assert TTTConfig.from_dict(TTTConfig(mode="Online", K=3).to_dict()) == TTTConfig(mode=TTTMode.ONLINE, K=3)


def test_ttt_adapt_needs_single_image(trained_model, tiny_dataset):
    with pytest.raises(ContractViolation):
        ttt_adapt(trained_model, to_inputs(tiny_dataset.images[:2]), TTTConfig(K=1))


# Evaluation
def test_evaluate_counts_errors(mocker, tiny_dataset):
    model = build_model(TINY_ARCH, BridgeConfig.shared())
    n = len(tiny_dataset)
    logits = np.eye(4)[tiny_dataset.labels]
    logits[0] = np.roll(logits[0], 1)
    rot_labels = np.tile(np.arange(4), n)
    mocker.patch.object(evaluate_module, "predict_logits", return_value=logits)
    mocker.patch.object(evaluate_module, "rotation_logits", return_value=(np.eye(4)[rot_labels], rot_labels))
    metrics = evaluate(model, tiny_dataset, RegimeKind.JOINT_TRAINING)
    assert metrics.main_error_percent == pytest.approx(100.0 / n)
    assert metrics.ss_error_percent == 0.0
    assert metrics.per_shift == {tiny_dataset.name: pytest.approx(100.0 / n)}


def test_random_logits_give_chance_error(mocker):
    n = 2000
    rng = np.random.default_rng(0)
    dataset = ImageDataset(np.zeros((n, 3, 8, 8), dtype=np.uint8), rng.integers(0, 4, size=n), "chance", 4)
    rot_labels = np.tile(np.arange(4), n)
    mocker.patch.object(evaluate_module, "predict_logits", return_value=rng.standard_normal((n, 4)))
    mocker.patch.object(
        evaluate_module, "rotation_logits", return_value=(rng.standard_normal((4 * n, 4)), rot_labels)
    )
    metrics = evaluate(build_model(TINY_ARCH, BridgeConfig.shared()), dataset, RegimeKind.JOINT_TRAINING)
    assert metrics.main_error_percent == pytest.approx(75.0, abs=3.0)
    assert metrics.ss_error_percent == pytest.approx(75.0, abs=3.0)


@pytest.mark.parametrize(
    "regime, bridge",
    [
        (RegimeKind.SSDN_ONE_PASS, BridgeConfig.shared()),
        (RegimeKind.SSDN_PLUS_TTT, BridgeConfig.shared()),
        (RegimeKind.JOINT_TRAINING, BridgeConfig()),
        (RegimeKind.ORIGINAL_TTT, BridgeConfig()),
    ],
)
def test_evaluate_rejects_mismatched_model(tiny_dataset, regime, bridge):
    with pytest.raises(ContractViolation):
        evaluate(build_model(TINY_ARCH, bridge), tiny_dataset, regime)


def test_evaluate_ttt_leaves_model_untouched_and_shards_agree(trained_model, tiny_dataset):
    test = tiny_dataset.subset(range(6), "six")
    before = trained_model.registry.copy()
    cfg = TTTConfig(K=2, lr=0.01)
    one = evaluate(trained_model, test, RegimeKind.SSDN_PLUS_TTT, cfg, workers=1)
    three = evaluate(trained_model, test, RegimeKind.SSDN_PLUS_TTT, cfg, workers=3)
    assert trained_model.registry.equals(before)
    assert one.main_error_percent == three.main_error_percent
    assert one.ss_error_percent == three.ss_error_percent


def test_evaluate_online_mode(trained_model, tiny_dataset):
    test = tiny_dataset.subset(range(6), "six")
    before = trained_model.registry.copy()
    cfg = TTTConfig(K=1, lr=0.01, mode=TTTMode.ONLINE)
    a = evaluate(trained_model, test, RegimeKind.SSDN_PLUS_TTT, cfg)
    b = evaluate(trained_model, test, RegimeKind.SSDN_PLUS_TTT, cfg)
    assert trained_model.registry.equals(before)
    assert a.main_error_percent == b.main_error_percent


def test_one_pass_equals_zero_step_ttt(trained_model, tiny_dataset):
    one_pass = evaluate(trained_model, tiny_dataset, RegimeKind.SSDN_ONE_PASS)
    zero_step = evaluate(trained_model, tiny_dataset, RegimeKind.SSDN_PLUS_TTT, TTTConfig(K=0))
    assert one_pass.main_error_percent == zero_step.main_error_percent


def test_rotation_error_range(trained_model, tiny_dataset):
    assert 0.0 <= rotation_error(trained_model, tiny_dataset) <= 100.0


def test_regime_kinds():
    assert [r.value for r in RegimeKind] == ["Standard", "JointTraining", "OriginalTTT", "SSDNOnePass", "SSDNPlusTTT"]
    assert RegimeKind.STANDARD.bridge_config() == BridgeConfig.shared()
    assert RegimeKind.SSDN_ONE_PASS.bridge_config() == BridgeConfig()
    assert not RegimeKind.STANDARD.trains_ss
    assert RegimeKind.ORIGINAL_TTT.uses_ttt and not RegimeKind.ORIGINAL_TTT.uses_bridges
    with pytest.raises(ContractViolation):
        RegimeKind.SSDN_ONE_PASS.bridge_config(BridgeConfig.shared())


@pytest.mark.parametrize("value", [-0.1, 100.1])
def test_metrics_range(value):
    with pytest.raises(ContractViolation):
        Metrics(main_error_percent=value)


def test_perturbed_model_predictions_differ_from_fresh(tiny_dataset):
    # sanity: perturbation changes what the evaluation sees
    fresh = build_model(TINY_ARCH, BridgeConfig(), seed=0, dtype=np.float64)
    moved = perturb(fresh.clone(), scale=0.5)
    x = to_inputs(tiny_dataset.images[:4], np.float64)
    assert not np.allclose(
        forward_main(fresh, Tape(np.float64).leaf(x)).value, forward_main(moved, Tape(np.float64).leaf(x)).value
    )
