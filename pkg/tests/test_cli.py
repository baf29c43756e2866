import json

import numpy as np
import pytest

from tfb_kit.cli import main
from tfb_kit.data import toy_blobs
from tfb_kit.formats import (
    checkpoint_from_json,
    checkpoint_to_json,
    dataset_to_csv,
    load_checkpoint,
    read_csv,
)
from tfb_kit.netcore import ModelCheckpoint, Task, forward, init_network, mlp_topology
from tfb_kit.verify import CHECKS


def _train(tmp_path, name="m.json", *extra):
    out = tmp_path / name
    assert main(["train", "--out", str(out), *extra]) == 0
    return out


@pytest.fixture(scope="module")
def blobs_ckpt(tmp_path_factory):
    out = tmp_path_factory.mktemp("blobs") / "b.json"
    args = ["train", "--task", "toy-blobs", "--per-class", "60", "--steps", "200", "--lr", "0.05", "--seed", "3"]
    assert main(args + ["--out", str(out)]) == 0
    return out


class TestTrain:
    def test_meta_records_hyperparameters(self, tmp_path):
        out = _train(tmp_path, "m.json", "--task", "toy-cubic", "--steps", "1000", "--lr", "0.1", "--seed", "7")
        ckpt = load_checkpoint(out)
        assert ckpt.meta["steps"] == 1000 and ckpt.meta["learning_rate"] == 0.1
        assert ckpt.meta["train_seed"] == 7

    def test_zero_steps_is_initialization(self, tmp_path):
        out = _train(tmp_path, "m.json", "--steps", "0", "--seed", "4")
        net = load_checkpoint(out).network()
        ref = init_network(mlp_topology([1, 16, 1], 2, "relu"), 4)
        for a, b in zip(net.layers, ref.layers):
            np.testing.assert_array_equal(a.w0, b.w0)
            np.testing.assert_array_equal(a.b, b.b)
            np.testing.assert_array_equal(a.a, b.a)

    def test_byte_identical_retrain(self, tmp_path):
        a = _train(tmp_path, "a.json", "--steps", "50")
        b = _train(tmp_path, "b.json", "--steps", "50")
        assert a.read_bytes() == b.read_bytes()

    def test_unwritable(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "missing" / "m.json")]) == 2

    def test_negative_steps(self, tmp_path):
        assert main(["train", "--steps", "-1", "--out", str(tmp_path / "m.json")]) == 2

    def test_divergence_is_numeric_error(self, tmp_path):
        assert main(["train", "--steps", "200", "--lr", "1e30", "--out", str(tmp_path / "m.json")]) == 3


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        out = _train(tmp_path, "m.json", "--steps", "20")
        ckpt = load_checkpoint(out)
        again = checkpoint_from_json(checkpoint_to_json(ckpt))
        assert ckpt.equals(again)
        assert checkpoint_to_json(again) == out.read_text()

    def test_bayes_round_trip(self, blobs_ckpt, tmp_path):
        out = tmp_path / "bz.json"
        assert main(["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(out), "--sigma", "0.2"]) == 0
        ckpt = load_checkpoint(out)
        doc = json.loads(out.read_text())
        adapted = [entry for entry in doc["layers"] if "d" in entry]
        assert adapted and all(e["sigma_q"] == 0.2 and e["family"] == "final" for e in adapted)
        assert ckpt.posterior().sigma_q == 0.2
        assert ckpt.equals(checkpoint_from_json(checkpoint_to_json(ckpt)))

    def test_rejects_unknown_version(self, tmp_path):
        out = _train(tmp_path, "m.json", "--steps", "0")
        doc = json.loads(out.read_text())
        doc["format_version"] = 99
        with pytest.raises(ValueError):
            checkpoint_from_json(json.dumps(doc))


class TestBayesianize:
    def test_sigma_zero_is_deterministic(self, blobs_ckpt, tmp_path):
        out = tmp_path / "z.json"
        assert main(["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(out), "--sigma", "0"]) == 0
        base = load_checkpoint(blobs_ckpt).network()
        bz = load_checkpoint(out)
        x = toy_blobs(3, 10, 3.0, 99).inputs
        assert np.max(np.abs(forward(bz.network(), x) - forward(base, x))) <= 1e-12
        e1, e2 = tmp_path / "e1.csv", tmp_path / "e2.csv"
        assert main(["eval", "--checkpoint", str(out), "--out", str(e1)]) == 0
        assert main(["eval", "--checkpoint", str(out), "--deterministic", "--out", str(e2)]) == 0
        v1 = [float(r[1]) for r in read_csv(e1)[1]]
        v2 = [float(r[1]) for r in read_csv(e2)[1]]
        np.testing.assert_allclose(v1, v2, atol=1e-12, rtol=0)

    def test_binary_trace_shape(self, blobs_ckpt, tmp_path):
        out = tmp_path / "bb.json"
        args = ["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(out), "--rounds", "6", "--anchor-size", "60"]
        assert main(args) == 0
        header, rows = read_csv(tmp_path / "bb.trace.csv")
        assert header[:2] == ["round", "sigma_q"] and len(rows) == 6
        trace = json.loads((tmp_path / "bb.trace.json").read_text())
        assert trace["mode"] == "binary" and len(trace["probes"]) == 6
        assert load_checkpoint(out).posterior().sigma_q == trace["result_sigma"]

    def test_grid_mode(self, blobs_ckpt, tmp_path):
        out = tmp_path / "g.json"
        grid = "0.01,0.015,0.02,0.025,0.03,0.035,0.04,0.05"
        args = ["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(out), "--search", "grid", "--grid", grid]
        assert main(args + ["--anchor-size", "60"]) == 0
        trace = json.loads((tmp_path / "g.trace.json").read_text())
        assert trace["grid"] == [float(g) for g in grid.split(",")]
        assert len(read_csv(tmp_path / "g.trace.csv")[1]) == 8
        assert 0.01 <= trace["result_sigma"] <= 0.05

    def test_unlabeled_anchor_file(self, blobs_ckpt, tmp_path):
        anchor = tmp_path / "anchor.csv"
        dataset_to_csv(toy_blobs(3, 20, 3.0, 1).unlabeled(), anchor)
        out = tmp_path / "u.json"
        args = ["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(out), "--anchor-file", str(anchor)]
        assert main(args) == 0

    def test_already_bayesianized(self, blobs_ckpt, tmp_path):
        first = tmp_path / "f.json"
        assert main(["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(first), "--sigma", "0.1"]) == 0
        assert main(["bayesianize", "--checkpoint", str(first), "--out", str(tmp_path / "s.json"), "--sigma", "0.1"]) == 2

    def test_rank_deficient_adapter(self, tmp_path):
        out = _train(tmp_path, "m.json", "--steps", "0")
        ckpt = load_checkpoint(out)
        ckpt.tensors["0.b"][...] = 0.0
        bad = tmp_path / "bad.json"
        bad.write_text(checkpoint_to_json(ckpt))
        assert main(["bayesianize", "--checkpoint", str(bad), "--out", str(tmp_path / "o.json"), "--sigma", "0.1"]) == 3


class TestEval:
    def test_rows(self, blobs_ckpt, tmp_path):
        out = tmp_path / "e.csv"
        assert main(["eval", "--checkpoint", str(blobs_ckpt), "--mc-samples", "10", "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["kind", "value", "mc_samples", "seed"]
        kinds = {r[0]: float(r[1]) for r in rows}
        assert 0.0 <= kinds["acc"] <= 1.0 and 0.0 <= kinds["ece"] <= 1.0
        assert all(r[2] == "10" for r in rows)
        assert out.read_bytes().endswith(b"\r\n")

    def test_identical_bytes(self, blobs_ckpt, tmp_path):
        bz = tmp_path / "bz.json"
        assert main(["bayesianize", "--checkpoint", str(blobs_ckpt), "--out", str(bz), "--sigma", "0.5"]) == 0
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert main(["eval", "--checkpoint", str(bz), "--seed", "4", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_metric_mismatch(self, blobs_ckpt, tmp_path):
        assert main(["eval", "--checkpoint", str(blobs_ckpt), "--metrics", "mse"]) == 2

    def test_labeled_data_file(self, blobs_ckpt, tmp_path):
        data = tmp_path / "d.csv"
        dataset_to_csv(toy_blobs(3, 10, 3.0, 8), data)
        assert main(["eval", "--checkpoint", str(blobs_ckpt), "--data-file", str(data), "--metrics", "acc"]) == 0


class TestDemoToy:
    @staticmethod
    @pytest.fixture(scope="class")
    def demo(tmp_path_factory):
        d = tmp_path_factory.mktemp("demo")
        assert main(["demo-toy", "--out", str(d / "bands.csv")]) == 0
        return d

    def test_five_sections(self, demo):
        header, rows = read_csv(demo / "bands.csv")
        assert header == ["sigma_q", "x", "mean", "lo", "hi"]
        assert sorted({float(r[0]) for r in rows}) == [0.1, 0.3, 0.6, 1.0, 1.5]
        assert len(rows) == 5 * 121

    def test_difference_non_decreasing(self, demo):
        _, rows = read_csv(demo / "bands.summary.csv")
        diffs = [float(r[1]) for r in rows]
        assert len(diffs) == 5
        assert all(b >= a for a, b in zip(diffs, diffs[1:]))

    def test_zero_sigma_control(self, tmp_path):
        out = tmp_path / "c.csv"
        assert main(["demo-toy", "--sigmas", "0", "--steps", "100", "--out", str(out)]) == 0
        for r in read_csv(out)[1]:
            assert r[3] == r[2] == r[4]


class TestVerify:
    def test_default_passes(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert main(["verify", "--json", str(out)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == len(CHECKS)
        assert all(line.startswith("PASS") for line in lines)
        assert json.loads(out.read_text())["failures"] == 0

    def test_injected_fault(self, capsys):
        assert main(["verify", "--inject-fault"]) == 4
        lines = capsys.readouterr().out.strip().splitlines()
        failed = [line for line in lines if line.startswith("FAIL")]
        assert len(lines) == len(CHECKS)
        assert len(failed) == 1 and "tfb_covariance_identity" in failed[0]
