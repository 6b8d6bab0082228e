import json
import math

import numpy as np
import pandas as pd
import pytest

from app import main as cli
from app.core.exceptions import ConfigurationError, NonFiniteError, TrainingDivergedError
from app.detector.checkpoint import load_checkpoint
from app.evalkit.reports import MISSING
from app.scenegen.dataset import generate_dataset
from app.schemas.common import Domain, Method, ScaleBucket, Scenario
from app.schemas.experiment import ExperimentConfig
from app.schemas.metrics import MetricsReport
from app.services.presets import apply_overrides, build_config, list_presets, parse_override_args
from app.usdaf.alignment import AdaptationPlan
from app.usdaf.multilabel import DOMAIN_ENTRIES, SCALE_ENTRIES, FilterConfig
from app.workers import trainer
from app.workers.batching import EpochShuffler, PairedBatcher, make_batch
from app.workers.methods import NEUTRAL_M, adaptation_plan
from app.workers.suite import RunOutcome, RunSpec, execute_run, expand_runs, run_suite
from app.workers.trainer import evaluate_checkpoint, export_features, grl_coefficient, run_dir_for, train

RUN_FILES = ("config.json", "train.log", "loss_curve.csv", "checkpoint.bin", "metrics.json", "metrics.md", "run_record.json")


@pytest.fixture
def tiny_dataset(tiny_manifest):
    return generate_dataset(tiny_manifest)


# Presets y configuración
def test_all_presets_load():
    """Test: cada preset produce una configuración válida"""
    names = list_presets()
    assert {"closed", "closed_foggy", "partial", "open_075", "open_050", "open_025", "open_subset"} <= set(names)
    for name in names:
        config = build_config(preset=name)
        assert config.preset == name


def test_preset_values():
    """Test: open_050 es open-set con ξ = 0.5 y desplazamiento de escala"""
    config = build_config(preset="open_050")
    assert config.manifest.label_space.scenario is Scenario.OPEN_SET
    assert config.manifest.label_space.xi == 0.5
    assert config.manifest.scale_shift is True
    assert build_config(preset="closed").manifest.scale_shift is False


def test_overrides_apply_with_types():
    """Test: overrides punteados con tipos interpretados"""
    config = build_config(
        preset="open_050",
        overrides={"manifest.label_space.xi": "0.25", "method": "DAF", "seeds": "[4, 5]", "grl_ramp": "true"},
    )
    assert config.manifest.label_space.xi == 0.25
    assert config.manifest.seed == 15
    assert config.method is Method.DAF
    assert config.seeds == [4, 5]
    assert config.grl_ramp is True


def test_config_file_merges_over_preset(tmp_path):
    """Test: el archivo de configuración se mezcla sobre el preset"""
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"eta": 0.05, "manifest": {"seed": 99}}))
    config = build_config(preset="partial", config_path=path)
    assert config.eta == 0.05
    assert config.manifest.seed == 99
    assert config.manifest.label_space.scenario is Scenario.PARTIAL_SET


@pytest.mark.parametrize(
    "kwargs",
    [
        {"preset": "nope"},
        {"overrides": {"lr_drop_step": "10", "total_steps": "5"}},
        {"overrides": {"m": "0.7"}},
        {"overrides": {"detector.image_size": "32"}},
    ],
)
def test_invalid_configurations(kwargs):
    """Test: preset desconocido y configuraciones inválidas"""
    with pytest.raises(ConfigurationError):
        build_config(**kwargs)


def test_missing_config_file(tmp_path):
    """Test: archivo de configuración inexistente"""
    with pytest.raises(ConfigurationError):
        build_config(config_path=tmp_path / "missing.json")


def test_parse_override_args():
    """Test: --clave=valor con guiones convertidos"""
    assert parse_override_args(["--eta=0.1", "--manifest.label-space.xi=0.5"]) == {
        "eta": "0.1",
        "manifest.label_space.xi": "0.5",
    }
    with pytest.raises(ConfigurationError):
        parse_override_args(["eta"])


def test_apply_overrides_does_not_mutate_input():
    """Test: el diccionario original queda intacto"""
    data = {"manifest": {"seed": 1}}
    result = apply_overrides(data, {"manifest.seed": "2"})
    assert result["manifest"]["seed"] == 2
    assert data["manifest"]["seed"] == 1


def test_config_hash_ignores_output_dir(tiny_config, tmp_path):
    """Test: el hash no depende del directorio de salida"""
    moved = tiny_config.model_copy(update={"output_dir": tmp_path / "elsewhere"})
    assert moved.config_hash() == tiny_config.config_hash()
    assert tiny_config.model_copy(update={"eta": 0.5}).config_hash() != tiny_config.config_hash()


def test_learning_rate_schedule(tiny_config):
    """Test: caída del learning rate en lr_drop_step"""
    assert tiny_config.learning_rate_at(1) == tiny_config.learning_rate
    assert tiny_config.learning_rate_at(2) == pytest.approx(tiny_config.learning_rate / 10.0)


def test_grl_coefficient(tiny_config):
    """Test: η constante o en rampa"""
    assert grl_coefficient(tiny_config, 3) == tiny_config.eta
    ramp = tiny_config.model_copy(update={"grl_ramp": True})
    assert grl_coefficient(ramp, 0) == 0.0
    expected = tiny_config.eta * (2.0 / (1.0 + math.exp(-10.0)) - 1.0)
    assert grl_coefficient(ramp, tiny_config.total_steps) == pytest.approx(expected)


# Métodos
@pytest.mark.parametrize(
    "method,entries,m",
    [
        (Method.DAF, DOMAIN_ENTRIES, None),
        (Method.USDAF, SCALE_ENTRIES, 0.3),
        (Method.USDAF_NO_FM, SCALE_ENTRIES, NEUTRAL_M),
        (Method.USDAF_NO_SAA, DOMAIN_ENTRIES, 0.3),
    ],
)
def test_method_table(method, entries, m):
    """Test: salidas del discriminador y filtro de cada método"""
    plan = adaptation_plan(method, eta=0.01, m=0.3)
    assert plan.entries == entries
    assert plan.eta == 0.01
    if m is None:
        assert plan.filter_config is None
    else:
        assert plan.filter_config.m == m


def test_source_only_has_no_plan():
    """Test: SourceOnly no adapta"""
    assert adaptation_plan(Method.SOURCE_ONLY, 0.01, 0.3) is None


# Lotes
def test_epoch_shuffler_visits_every_index_once_per_epoch():
    """Test: cada época es una permutación completa"""
    shuffler = EpochShuffler(5, np.random.default_rng(0))
    first = [shuffler.next_index() for _ in range(5)]
    second = [shuffler.next_index() for _ in range(5)]
    assert sorted(first) == sorted(second) == list(range(5))
    assert shuffler.epoch == 1


def test_paired_batcher_is_deterministic(tiny_dataset):
    """Test: misma semilla, mismos pares"""
    def pairs(seed):
        batcher = PairedBatcher(tiny_dataset.source_train, tiny_dataset.target_train, seed=seed)
        return [(s.index, t.index) for s, t in (next(batcher) for _ in range(8))]

    drawn = pairs(1)
    assert drawn == pairs(1)
    assert sorted(s for s, _ in drawn[:6]) == list(range(6))
    assert sorted(t for _, t in drawn[:6]) == list(range(6))

    source, target = next(PairedBatcher(tiny_dataset.source_train, tiny_dataset.target_train))
    assert source.domain is Domain.SOURCE and target.domain is Domain.TARGET


def test_make_batch_pairs_one_image_per_domain(tiny_dataset):
    """Test: make_batch entrega un par fuente/objetivo por paso, más allá de una época"""
    batches = make_batch(tiny_dataset.source_train, tiny_dataset.target_train, seed=2)
    pairs = [next(batches) for _ in range(2 * len(tiny_dataset.source_train))]
    assert all(s.domain is Domain.SOURCE and t.domain is Domain.TARGET for s, t in pairs)
    counts = np.bincount([s.index for s, _ in pairs], minlength=len(tiny_dataset.source_train))
    assert counts.tolist() == [2] * len(tiny_dataset.source_train)


def test_empty_stream_cannot_be_batched(tiny_dataset):
    """Test: secuencia vacía"""
    with pytest.raises(ConfigurationError):
        PairedBatcher([], tiny_dataset.target_train)


# Entrenamiento
def test_run_dir_layout(tiny_config, tmp_path):
    """Test: <raíz>/<nombre>/<preset>/<método>/seed_<k>"""
    assert run_dir_for(tiny_config, 3) == tmp_path / "runs" / "tiny" / "custom" / "USDAF" / "seed_3"
    assert run_dir_for(tiny_config, 3, "USDAF_m0.2").parent.name == "USDAF_m0.2"


def test_train_writes_artifacts(tiny_config, tiny_dataset):
    """Test: una corrida escribe sus artefactos y no lee anotaciones del objetivo"""
    record = train(tiny_config, seed=1, dataset=tiny_dataset)
    for name in RUN_FILES:
        assert (record.run_dir / name).exists(), name
    assert record.target_annotation_reads == 0
    assert record.hash_matches()
    assert len(record.loss_curve) == tiny_config.total_steps
    assert record.loss_curve[1].learning_rate == tiny_config.learning_rate
    assert record.loss_curve[2].learning_rate == pytest.approx(tiny_config.learning_rate / 10.0)
    assert record.metrics.metadata.config_hash == tiny_config.config_hash()
    assert record.metrics.group_means is not None

    curve = pd.read_csv(record.run_dir / "loss_curve.csv")
    assert list(curve["step"]) == [0, 1, 2, 3]
    _, meta = load_checkpoint(record.checkpoint_path)
    assert meta["method"] == "USDAF" and meta["entries"] == 4 and meta["seed"] == 1
    assert "Fin seed=1" in (record.run_dir / "train.log").read_text()


def test_train_is_reproducible(tiny_config, tiny_dataset, tmp_path):
    """Test: misma configuración y semilla -> curvas y métricas idénticas"""
    first = train(tiny_config, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "a")
    second = train(tiny_config, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "b")
    assert [s.model_dump() for s in first.loss_curve] == [s.model_dump() for s in second.loss_curve]
    assert first.metrics.model_dump() == second.metrics.model_dump()
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_source_only_has_no_adaptation_loss(tiny_config, tiny_dataset):
    """Test: SourceOnly optimiza solo la pérdida de detección"""
    config = tiny_config.model_copy(update={"method": Method.SOURCE_ONLY})
    record = train(config, seed=1, dataset=tiny_dataset)
    assert all(s.unida == 0.0 and s.total == s.detection for s in record.loss_curve)
    assert record.metrics.group_means is None


def test_no_filter_ablation_equals_neutral_margin(tiny_config, tiny_dataset, tmp_path):
    """Test: USDAF_noFM coincide con USDAF con m = 0.5"""
    ablation = tiny_config.model_copy(update={"method": Method.USDAF_NO_FM})
    neutral = tiny_config.model_copy(update={"method": Method.USDAF, "m": 0.5})
    a = train(ablation, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "nofm")
    b = train(neutral, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "m05")
    assert [s.total for s in a.loss_curve] == [s.total for s in b.loss_curve]
    assert a.metrics.mean_ap == b.metrics.mean_ap


def test_no_scale_ablation_equals_domain_only_plan_with_filter(tiny_config, tiny_dataset, tmp_path, monkeypatch):
    """Test: USDAF_noSAA coincide bit a bit con DAF más el filtro m armado a mano"""
    ablation = tiny_config.model_copy(update={"method": Method.USDAF_NO_SAA, "m": 0.3})
    a = train(ablation, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "nosaa")

    def domain_only_filtered(method, eta, m):
        return AdaptationPlan(entries=DOMAIN_ENTRIES, filter_config=FilterConfig(0.3), eta=eta)

    monkeypatch.setattr(trainer, "adaptation_plan", domain_only_filtered)
    hand_built = tiny_config.model_copy(update={"method": Method.DAF, "m": 0.3})
    b = train(hand_built, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "daf_fm")

    assert [s.model_dump() for s in a.loss_curve] == [s.model_dump() for s in b.loss_curve]
    assert a.metrics.model_dump() == b.metrics.model_dump()
    arrays_a, _ = load_checkpoint(a.checkpoint_path)
    arrays_b, _ = load_checkpoint(b.checkpoint_path)
    assert arrays_a.keys() == arrays_b.keys()
    assert all(np.array_equal(arrays_a[k], arrays_b[k]) for k in arrays_a)


def test_divergence_dumps_last_batch(tiny_config, tiny_dataset, tmp_path, monkeypatch):
    """Test: un valor no finito detiene la corrida y vuelca el lote"""
    def explode(*args, **kwargs):
        raise NonFiniteError("La operación 'test' produjo valores no finitos")

    monkeypatch.setattr(trainer, "compute_step_losses", explode)
    with pytest.raises(TrainingDivergedError):
        train(tiny_config, seed=1, dataset=tiny_dataset, run_dir=tmp_path / "boom")
    assert (tmp_path / "boom" / "nan_dump.npz").exists()
    assert json.loads((tmp_path / "boom" / "nan_dump.json").read_text())["step"] == 0


def test_evaluate_checkpoint_matches_training_metrics(tiny_config, tiny_dataset, tmp_path):
    """Test: reevaluar el checkpoint reproduce metrics.json"""
    record = train(tiny_config, seed=1, dataset=tiny_dataset)
    report = evaluate_checkpoint(record.checkpoint_path)
    assert report.model_dump() == record.metrics.model_dump()

    path = export_features(record.checkpoint_path, tmp_path / "features.csv")
    frame = pd.read_csv(path)
    expected = sum(s.num_objects for s in tiny_dataset.source_test) + sum(s.num_objects for s in tiny_dataset.target_test)
    assert len(frame) == expected


def test_checkpoint_method_mismatch(tiny_config, tiny_dataset):
    """Test: evaluar un checkpoint con la configuración de otro método"""
    record = train(tiny_config, seed=1, dataset=tiny_dataset)
    other = tiny_config.model_copy(update={"method": Method.DAF})
    with pytest.raises(ConfigurationError):
        evaluate_checkpoint(record.checkpoint_path, other, tiny_dataset)


# Suite
def _fake_report(mean_ap):
    return MetricsReport(
        per_class_ap={1: mean_ap, 2: mean_ap},
        common_classes=[1, 2],
        mean_ap=mean_ap,
        per_scale_map={ScaleBucket.SMALL: None, ScaleBucket.MEDIUM: mean_ap, ScaleBucket.LARGE: None},
    )


FAKE_MAP = {("SourceOnly", 1): 0.2, ("SourceOnly", 2): 0.4, ("USDAF", 1): 0.5, ("USDAF", 2): 0.7}


def fake_runner(spec, output_root, overrides):
    if spec.preset == "open_050" and spec.method is Method.USDAF:
        return RunOutcome(spec=spec, error="TrainingDivergedError: simulado")
    return RunOutcome(spec=spec, metrics=_fake_report(FAKE_MAP[(spec.label, spec.seed)]))


def test_expand_runs_with_m_sweep():
    """Test: el barrido de m solo expande los métodos con filtro"""
    runs = expand_runs(["closed"], [Method.DAF, Method.USDAF], [1], m_sweep=[0.2, 0.4])
    assert [r.label for r in runs] == ["DAF", "USDAF_m0.2", "USDAF_m0.4"]
    assert [r.m for r in runs] == [None, 0.2, 0.4]


def test_suite_tables_with_fake_runner(tmp_path):
    """Test: tablas por semilla, resumen con media/desviación y huecos marcados"""
    result = run_suite(
        ["closed", "open_050"], [Method.SOURCE_ONLY, Method.USDAF], seeds=[1, 2],
        output_root=tmp_path, runner=fake_runner,
    )
    assert len(result.per_seed) == 8
    assert list(result.per_seed.columns) == [
        "preset", "method", "seed", "status", "mean_ap", "map_small", "map_medium", "map_large", "run_dir", "error"
    ]
    assert len(result.failures) == 2

    summary = result.summary.set_index(["preset", "method"])
    assert summary.loc[("closed", "USDAF"), "mean_ap_mean"] == pytest.approx(0.6)
    assert summary.loc[("closed", "USDAF"), "mean_ap_std"] == pytest.approx(0.1)
    assert summary.loc[("open_050", "SourceOnly"), "n_seeds"] == 2
    assert ("open_050", "USDAF") not in summary.index

    markdown = result.files["summary_md"].read_text()
    assert "| USDAF | 0.6000 ± 0.1000 | —" in markdown
    assert "| SourceOnly | 0.3000 ± 0.1000 | 0.3000 ± 0.1000 |" in markdown

    transfer = pd.read_csv(result.files["negative_transfer"])
    assert len(transfer) == 2
    assert transfer["map_gain"].tolist() == pytest.approx([0.3, 0.3])
    assert not transfer["negative_transfer"].any()

    adapted = [o for o in result.outcomes if o.ok and o.spec.label == "USDAF"]
    assert all(o.metrics.baseline == "SourceOnly" for o in adapted)

    per_class = pd.read_csv(result.files["per_class_closed"])
    assert per_class["method"].tolist() == ["SourceOnly", "USDAF"]
    assert per_class.loc[1, "class_1"] == pytest.approx(0.6)
    assert result.files["chart"].exists()
    assert MISSING in markdown


def test_suite_single_run_table(tmp_path):
    """Test: una sola corrida produce una tabla de una fila"""
    result = run_suite(["closed"], [Method.SOURCE_ONLY], seeds=[1], output_root=tmp_path, runner=fake_runner, chart=False)
    assert len(result.summary) == 1
    assert result.summary.loc[0, "mean_ap_std"] == 0.0
    assert "chart" not in result.files


def test_execute_run_end_to_end(tmp_path):
    """Test: una corrida real del suite sobre un preset reducido"""
    overrides = {
        "total_steps": "2",
        "lr_drop_step": "1",
        "manifest.counts.source_train": "3",
        "manifest.counts.target_train": "3",
        "manifest.counts.target_test": "2",
        "manifest.counts.source_test": "2",
        "detector.channels": "[4, 8, 8]",
        "detector.top_k": "4",
        "detector.roi_hidden": "8",
        "discriminator.image_hidden": "4",
        "discriminator.instance_hidden": "4",
    }
    outcome = execute_run(RunSpec("closed", Method.USDAF, 1, "USDAF"), tmp_path, overrides)
    assert outcome.ok, outcome.error
    assert outcome.run_dir == tmp_path / "closed" / "closed" / "USDAF" / "seed_1"
    assert (outcome.run_dir / "metrics.json").exists()


def test_execute_run_reports_errors(tmp_path):
    """Test: una configuración inválida se devuelve como error, no como excepción"""
    outcome = execute_run(RunSpec("closed", Method.USDAF, 1, "USDAF"), tmp_path, {"total_steps": "0"})
    assert not outcome.ok
    assert outcome.error.startswith("ConfigurationError")


# Línea de comandos
def _write_config(config: ExperimentConfig, tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(config.model_dump_json())
    return path


def test_cli_generate(tiny_config, tmp_path, capsys):
    """Test: generate escribe estadísticas e imprime el espacio de etiquetas"""
    path = _write_config(tiny_config, tmp_path)
    out_dir = tmp_path / "dataset"
    assert cli.main(["generate", "--config", str(path), "--output", str(out_dir), "--dump-images", "1"]) == 0
    stats = json.loads((out_dir / "dataset_stats.json").read_text())
    assert len(stats) == 4
    assert len(list((out_dir / "images").rglob("*.png"))) == 4
    printed = capsys.readouterr().out
    assert '"scenario": "open_set"' in printed


def test_cli_train_with_override(tiny_config, tmp_path):
    """Test: train acepta overrides --clave=valor"""
    path = _write_config(tiny_config, tmp_path)
    assert cli.main(["train", "--config", str(path), "--seed", "1", "--total_steps=3"]) == 0
    run_dir = tmp_path / "runs" / "tiny" / "custom" / "USDAF" / "seed_1"
    assert len(pd.read_csv(run_dir / "loss_curve.csv")) == 3


def test_cli_reports_configuration_errors():
    """Test: un error de configuración termina con código 2"""
    assert cli.main(["generate", "--preset", "no_existe"]) == 2
    assert cli.main(["train", "--preset", "closed", "bad-override"]) == 2


def test_cli_eval_applies_overrides_to_checkpoint_config(tiny_config, tiny_dataset, tmp_path, monkeypatch):
    """Test: sin --config, eval y export-features aplican los overrides sobre el config.json del checkpoint"""
    record = train(tiny_config, seed=1, dataset=tiny_dataset)
    checkpoint = str(record.checkpoint_path)

    assert cli.main(["eval", "--checkpoint", checkpoint, "--output", str(tmp_path / "eval"), "--log_every=2"]) == 0
    written = MetricsReport.model_validate_json((tmp_path / "eval" / "metrics.json").read_text())
    assert written.model_dump() == record.metrics.model_dump()

    seen = {}

    def fake_evaluate(path, config):
        seen["eval"] = config
        return record.metrics

    def fake_export(path, output, config):
        seen["export"] = config
        return output

    monkeypatch.setattr(cli, "evaluate_checkpoint", fake_evaluate)
    monkeypatch.setattr(cli, "export_features", fake_export)
    assert cli.main(["eval", "--checkpoint", checkpoint, "--output", str(tmp_path / "e2"), "--manifest.counts.target_test=2"]) == 0
    assert seen["eval"].name == "tiny"
    assert seen["eval"].manifest.counts.target_test == 2
    assert cli.main(["export-features", "--checkpoint", checkpoint, "--output", str(tmp_path / "f.csv"), "--eta=0.05"]) == 0
    assert seen["export"].eta == 0.05

    # Un override inválido ya no se descarta en silencio
    assert cli.main(["eval", "--checkpoint", checkpoint, "--m=0.9"]) == 2


def test_cli_eval_overrides_need_a_config(tmp_path):
    """Test: overrides sin --config ni config.json junto al checkpoint"""
    checkpoint = tmp_path / "sin_config" / "checkpoint.bin"
    assert cli.main(["eval", "--checkpoint", str(checkpoint), "--eta=0.05"]) == 2
    assert cli.main(["export-features", "--checkpoint", str(checkpoint), "--output", str(tmp_path / "f.csv"), "--eta=0.05"]) == 2
