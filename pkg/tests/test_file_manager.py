import os

import numpy as np
import pandas as pd
import pytest

from common import file_manager
from common.data_controller import read_events_csv
from common.ensemble_controller import predict
from common.errors import StructureError
from common.selection_controller import SearchResult, Trial


def test_hierarchy_layout(trained_model, tmp_path):
    out = file_manager.save_hierarchy(trained_model, str(tmp_path / "len_20"))
    assert os.path.exists(os.path.join(out, "model.json"))
    assert os.path.exists(os.path.join(out, "cca.json"))
    for cid in trained_model.channels:
        assert sorted(os.listdir(os.path.join(out, "base", cid))) == [
            "n1_m1.json", "n1_m2.json", "n2_m1.json", "n2_m2.json",
        ]
        assert sorted(os.listdir(os.path.join(out, "stack", cid))) == ["n1.json", "n2.json"]
        assert len(os.listdir(os.path.join(out, "pools", cid))) == 4
    assert "cca.csv" in os.listdir(os.path.join(out, "traces"))


def test_loaded_hierarchy_predicts_identically(trained_model, tiny_dataset, tmp_path):
    file_manager.save_hierarchy(trained_model, str(tmp_path / "model"))
    loaded = file_manager.load_hierarchy(str(tmp_path / "model"))
    assert list(loaded.channels) == list(trained_model.channels)
    assert loaded.weights == trained_model.weights
    assert loaded.settings == trained_model.settings
    a, b = predict(trained_model, tiny_dataset), predict(loaded, tiny_dataset)
    for cid in a.channels:
        assert np.array_equal(a.channels[cid].step_probabilities, b.channels[cid].step_probabilities)
        assert np.array_equal(a.channels[cid].step_decisions, b.channels[cid].step_decisions)


def test_saving_twice_is_byte_identical(trained_model, tmp_path):
    file_manager.save_hierarchy(trained_model, str(tmp_path / "a"))
    reloaded = file_manager.load_hierarchy(str(tmp_path / "a"))
    file_manager.save_hierarchy(reloaded, str(tmp_path / "b"))
    assert file_manager.directory_digests(str(tmp_path / "a")) == file_manager.directory_digests(str(tmp_path / "b"))


def test_run_directory_records_the_combiner(trained_model, tmp_path):
    file_manager.save_run([trained_model], str(tmp_path / "run"), 0.5)
    models, combiner = file_manager.load_run(str(tmp_path / "run"))
    assert combiner == {"format_version": 1, "lengths": [20], "combine": "or", "theta": 0.5}
    assert models[0].settings.seg_len == 20


def test_missing_model_file_rejected(tmp_path):
    with pytest.raises(StructureError, match="missing file"):
        file_manager.load_hierarchy(str(tmp_path))


def test_predictions_csv_and_events(trained_model, tiny_dataset, tmp_path):
    frame = predict(trained_model, tiny_dataset, theta=0.2)
    csv_path, events_path = file_manager.write_predictions(frame, str(tmp_path / "pred.csv"))
    assert events_path.endswith("pred_events.csv")
    table = pd.read_csv(csv_path)
    assert list(table.columns) == ["channel_id", "timestamp", "probability", "decision"]
    assert len(table) == len(tiny_dataset.channel_ids) * len(tiny_dataset.timestamps)
    assert set(table["decision"].unique()) <= {0, 1}
    events = read_events_csv(events_path)
    assert len(events) == len(frame.events())


def test_trace_csv_keeps_best_trial(tmp_path):
    trace = (
        Trial(0, {"max_depth": 2}, 0.4, "random"),
        Trial(1, {"max_depth": 3}, 0.6, "random"),
        Trial(2, {"max_depth": 4}, 0.6, "model"),
    )
    path = file_manager.write_trace_csv(SearchResult({"max_depth": 3}, 0.6, trace), str(tmp_path / "t.csv"))
    back = file_manager.read_trace_csv(path)
    assert back.best_params == {"max_depth": 3}
    assert [t.phase for t in back.trace] == ["random", "random", "model"]


def test_directory_digests_skip_the_manifest(tmp_path):
    (tmp_path / "a.txt").write_text("x")
    (tmp_path / "manifest.json").write_text("{}")
    assert list(file_manager.directory_digests(str(tmp_path))) == ["a.txt"]


def test_tree_cross_channel_hierarchy_round_trip(tree_cca_model, tiny_dataset, tmp_path):
    file_manager.save_hierarchy(tree_cca_model, str(tmp_path / "model"))
    loaded = file_manager.load_hierarchy(str(tmp_path / "model"))
    assert all(head.spec.kind == "gbt" for head in loaded.cca.values())
    a, b = predict(tree_cca_model, tiny_dataset), predict(loaded, tiny_dataset)
    for cid in a.channels:
        assert np.array_equal(a.channels[cid].step_probabilities, b.channels[cid].step_probabilities)
    file_manager.save_hierarchy(loaded, str(tmp_path / "again"))
    assert file_manager.directory_digests(str(tmp_path / "model")) == file_manager.directory_digests(
        str(tmp_path / "again")
    )
