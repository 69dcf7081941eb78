import json
import math

import numpy as np
import pytest

from modules.circular_module import TWO_PI, cyclic_distance_array
from modules.data_module import generate_dataset, make_folds
from modules.losses_module import ActivationKind, LossKind
from modules.training_module import (
    NINE_CONFIGURATIONS,
    QUADRANT_PRESETS,
    Encoding,
    EvalReport,
    QuadrantBaseline,
    RunConfig,
    e_deg,
    load_run_config,
    quadrant_baseline,
    run_config_from_dict,
    sweep,
    sweep_csv,
    train,
    write_sweep_outputs,
)
from modules.utils_module import ConfigError, ContractError, ParseError

OPTIMAL = (Encoding.TWO_NEURON, ActivationKind.SIGMOID, LossKind.DIST_SQ)
ONE_NEURON_LINEAR = (Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.LINEAR)


def quick_config(triple=OPTIMAL, **overrides):
    settings = dict(epochs=1, batch_size=8, seed=0, scale="desk", augment_multiplier=1)
    settings.update(overrides)
    return RunConfig(*triple, **settings)


class TestEdeg:

    def test_examples(self):
        assert e_deg([0.5, 1.0], [0.5, 1.0]) == 0.0
        assert e_deg([0.0, math.radians(90)], [math.radians(10), math.radians(80)]) == pytest.approx(10.0)
        assert e_deg([0.0], [math.radians(350)]) == pytest.approx(10.0)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            e_deg([0.0], [0.0, 1.0])
        with pytest.raises(ContractError):
            e_deg([], [])

    def test_rotation_invariance_and_consistency(self):
        rng = np.random.default_rng(0)
        p, t = rng.uniform(0, TWO_PI, 200), rng.uniform(0, TWO_PI, 200)
        shift = rng.uniform(0, TWO_PI)
        assert e_deg((p + shift) % TWO_PI, (t + shift) % TWO_PI) == pytest.approx(e_deg(p, t), abs=1e-9)
        assert e_deg(p, t) == pytest.approx(np.degrees(cyclic_distance_array(p, t).mean()))


class TestEvalReport:

    def test_population_std_and_bound(self):
        report = EvalReport([1.0, 2.0, 3.0, 4.0])
        assert report.mean == pytest.approx(2.5)
        assert report.std == pytest.approx(math.sqrt(1.25))
        assert report.max_error_bound == pytest.approx(2.5 + 3 * math.sqrt(1.25))

    def test_empty(self):
        with pytest.raises(ContractError):
            EvalReport([])


class TestRunConfig:

    def test_nine_valid_combinations(self):
        assert len(NINE_CONFIGURATIONS) == 9
        for triple in NINE_CONFIGURATIONS:
            RunConfig(*triple)

    def test_invalid_combination(self):
        with pytest.raises(ConfigError):
            RunConfig(Encoding.TWO_NEURON, ActivationKind.CYCLIC, LossKind.DIST)
        with pytest.raises(ConfigError):
            RunConfig(Encoding.ONE_NEURON, ActivationKind.CYCLIC, LossKind.DIST_SQ)

    def test_from_dict(self):
        config = run_config_from_dict({"encoding": "2N", "activation": "sigmoid", "loss": "dist_sq",
                                       "epochs": 3, "seed": 9})
        assert config.epochs == 3 and config.seed == 9
        assert config.to_dict()["loss"] == "dist_sq"

    def test_unknown_key_is_an_error(self):
        with pytest.raises(ConfigError, match="epoch"):
            run_config_from_dict({"encoding": "2N", "activation": "sigmoid", "loss": "dist_sq", "epoch": 3})

    def test_wrong_type(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"encoding": "2N", "activation": "sigmoid", "loss": "dist_sq", "epochs": "3"})

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"encoding": "2N",')
        with pytest.raises(ParseError):
            load_run_config(path)

    def test_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"encoding": "1N", "activation": "cyclic", "loss": "cos"}))
        assert load_run_config(path).loss is LossKind.COS


class TestQuadrantBaseline:

    def test_published_averages(self):
        assert quadrant_baseline(QuadrantBaseline.equal_split(0.8789))["avg_inaccuracy_deg"] == \
            pytest.approx(33.41, abs=0.05)
        assert quadrant_baseline(QuadrantBaseline.equal_split(0.8186))["avg_inaccuracy_deg"] == \
            pytest.approx(38.84, abs=0.05)

    def test_perfect_accuracy(self):
        result = quadrant_baseline(QuadrantBaseline.equal_split(1.0))
        assert result["avg_inaccuracy_deg"] == pytest.approx(22.5)
        assert result["max_inaccuracy_deg"] == pytest.approx(45.0)

    def test_max_never_below_average(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            fractions = rng.dirichlet(np.ones(4))
            result = quadrant_baseline(QuadrantBaseline(*fractions))
            assert result["max_inaccuracy_deg"] >= result["avg_inaccuracy_deg"]

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ContractError):
            QuadrantBaseline(0.9, 0.05, 0.05, 0.05)

    def test_presets(self):
        assert QUADRANT_PRESETS["nih3t3"]["accuracy"] == 0.8789
        assert QUADRANT_PRESETS["u373"]["accuracy"] == 0.8176


class TestTrain:

    def test_runs_and_records_history(self, small_dataset):
        fold = make_folds(small_dataset.ids, k=1, seed=0)[0]
        result = train(quick_config(epochs=2), small_dataset, fold)
        assert result["success"]
        assert [h["epoch"] for h in result["history"]] == [0, 1, 2]
        assert 0.0 <= result["test_e_deg"] <= 180.0
        assert result["best_epoch"] in (0, 1, 2)

    def test_deterministic(self, small_dataset):
        fold = make_folds(small_dataset.ids, k=1, seed=0)[0]
        config = quick_config(triple=ONE_NEURON_LINEAR, augment_multiplier=2)
        a = train(config, small_dataset, fold)
        b = train(config, small_dataset, fold)
        assert a["test_e_deg"] == b["test_e_deg"]
        for (_, pa), (_, pb) in zip(a["model"].named_parameters(), b["model"].named_parameters()):
            assert np.array_equal(pa, pb)

    def test_zero_epochs_is_the_untrained_model(self, small_dataset):
        fold = make_folds(small_dataset.ids, k=1, seed=0)[0]
        result = train(quick_config(epochs=0), small_dataset, fold)
        assert result["success"] and result["best_epoch"] == 0

    def test_divergence_is_reported(self, small_dataset):
        fold = make_folds(small_dataset.ids, k=1, seed=0)[0]
        config = quick_config(triple=(Encoding.TWO_NEURON, ActivationKind.IDENTITY, LossKind.DIST_SQ),
                              epochs=3, learning_rate=1e300, optimizer="sgd")
        with np.errstate(all="ignore"):
            result = train(config, small_dataset, fold)
        assert not result["success"]
        assert result["epoch"] == 1


class TestSweep:

    def test_rows_runs_and_best_flag(self, small_dataset, tmp_path):
        folds = make_folds(small_dataset.ids, k=2, seed=1)
        configs = [quick_config(epochs=0), quick_config(triple=ONE_NEURON_LINEAR, epochs=0)]
        result = sweep(small_dataset, folds, configs=configs)
        assert result["success"]
        assert len(result["rows"]) == 2
        assert len(result["runs"]) == 4
        assert sum(row["best"] for row in result["rows"]) == 1
        assert all(len(row["per_fold"]) == 2 for row in result["rows"])

        paths = write_sweep_outputs(result, tmp_path, seed=1)
        assert paths["csv"].read_text().splitlines()[0] == "encoding,activation,loss,fold,e_deg"
        assert "| Encoding | Activation | Loss |" in paths["table"].read_text()
        summary = json.loads(paths["json"].read_text())
        assert summary["seed"] == 1 and len(summary["configurations"]) == 2

    def test_default_sweep_has_one_row_per_configuration(self, small_dataset):
        folds = make_folds(small_dataset.ids, k=1, seed=2)
        result = sweep(small_dataset, folds, seed=2, epochs=0, augment_multiplier=1)
        assert len(result["rows"]) == 9
        assert [(row["encoding"], row["activation"], row["loss"]) for row in result["rows"]] == \
            [(enc.value, act.value, kind.value) for enc, act, kind in NINE_CONFIGURATIONS]

    def test_parallel_matches_serial(self, small_dataset):
        folds = make_folds(small_dataset.ids, k=2, seed=1)
        configs = [quick_config(), quick_config(triple=ONE_NEURON_LINEAR)]
        serial = sweep(small_dataset, folds, configs=configs, jobs=1)
        parallel = sweep(small_dataset, folds, configs=configs, jobs=2)
        assert sweep_csv(serial["runs"]) == sweep_csv(parallel["runs"])


@pytest.mark.slow
def test_optimal_configuration_beats_one_neuron_linear():
    dataset = generate_dataset(2000, 64, seed=0)
    folds = make_folds(dataset.ids, k=4, seed=0)
    optimal = [train(quick_config(epochs=12, batch_size=32, augment_multiplier=2), dataset, f) for f in folds]
    baseline = [train(quick_config(triple=ONE_NEURON_LINEAR, epochs=12, batch_size=32, augment_multiplier=2),
                      dataset, f) for f in folds]
    optimal_mean = EvalReport([r["test_e_deg"] for r in optimal]).mean
    baseline_mean = EvalReport([r["test_e_deg"] for r in baseline]).mean
    assert optimal[0]["test_e_deg"] <= 25.0
    assert baseline_mean - optimal_mean >= 20.0
