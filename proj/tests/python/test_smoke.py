import json

import numpy as np
import pytest

import flsl


def test_preprocess_shapes(tmp_path):
    rng = np.random.default_rng(0)
    img = np.floor(rng.uniform(0, 256, size=(36, 48, 3)))
    flsl.save_ppm(img, tmp_path / "a.ppm")
    back = flsl.load_ppm(tmp_path / "a.ppm")
    assert np.array_equal(back, img)

    assert flsl.center_crop(img, 36).shape == (36, 36, 3)
    assert flsl.bilinear_resize(img, 10, 7).shape == (10, 7, 3)
    f = flsl.preprocess(img)
    assert f.shape == (3072,)
    assert abs(f[:1024].mean()) < 1e-9
    assert flsl.preprocess(img, green_metadata=True).shape == (3074,)


def test_bilinear_hand_values():
    img = np.repeat(np.arange(16, dtype=float).reshape(4, 4, 1), 3, axis=2)
    out = flsl.bilinear_resize(img, 2, 2)
    assert out[:, :, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]


def test_metrics_and_schedule():
    m = flsl.compute_metrics([1, 1, 1, 1, 1, 0, 0, 0, 0, 0], [1, 1, 1, 1, 0, 1, 1, 0, 0, 0])
    assert (m["tp"], m["fp"], m["tn"], m["fn"]) == (4, 1, 3, 2)
    assert m["accuracy"] == pytest.approx(0.7)
    assert m["f1"] == pytest.approx(8 / 11)
    assert flsl.expected_state(17 * 60 + 50, 360, 1080)
    assert not flsl.expected_state(12 * 60, 360, 1080)
    fleet = flsl.make_fleet(3, 2, 1, seed=4)
    assert [n["node_id"] for n in fleet] == list(range(6))
    assert sorted(n["node_type"] for n in fleet) == [0, 0, 0, 1, 1, 2]


def test_fedavg_and_checkpoint(tmp_path):
    def model(w, b):
        return {"dims": [1, 1, 1], "residual": False,
                "layers": [(np.array([[w]]), np.array([b])), (np.array([[1.0]]), np.array([0.0]))]}

    avg = flsl.fedavg([model(1.0, 0.0), model(3.0, 1.0)], [100, 300])
    assert avg["layers"][0][0][0, 0] == 2.5
    assert avg["layers"][0][1][0] == 0.75
    flsl.save_checkpoint(avg, tmp_path / "m.flsl")
    assert (tmp_path / "m.flsl").read_bytes()[:4] == b"FLSL"
    back = flsl.load_checkpoint(tmp_path / "m.flsl")
    assert back["dims"] == [1, 1, 1]
    assert back["layers"][0][0][0, 0] == 2.5
    assert 0.0 < flsl.forward(back, [1.0]) < 1.0
    with pytest.raises(ValueError):
        flsl.fedavg([model(1.0, 0.0)], [1, 2])


TINY = {
    "fleet__type0_nodes": 2,
    "fleet__type1_nodes": 1,
    "fleet__type2_nodes": 1,
    "fleet__samples_per_node": 10,
    "model__hidden": 4,
    "fl__rounds": 2,
    "centralised__epochs": 1,
    "personalised__epochs": 1,
}


def test_run_and_compare(tmp_path):
    report = flsl.run(output__dir=str(tmp_path / "run"), experiment__method="fl", **TINY)
    assert report["method"] == "fl"
    assert report["model_count"] == 1
    g = report["groups"]["all"]
    assert g["accuracy"] + g["error_rate"] == pytest.approx(1.0, abs=1e-12)
    on_disk = json.loads((tmp_path / "run" / "report_fl.json").read_text())
    assert on_disk == report

    reports = flsl.compare(output__dir=str(tmp_path / "cmp"), **TINY)
    assert [r["method"] for r in reports] == ["personalised", "centralised", "fl"]
    assert (tmp_path / "cmp" / "compare.json").exists()


def test_config_errors_and_cli(tmp_path):
    with pytest.raises(ValueError, match="fl.client_fraction"):
        flsl.run(fl__client_fraction=1.5)
    keys = [k for k, _, _ in flsl.config_keys()]
    assert "fl.client_fraction" in keys
    code, _, err = flsl.cli(["eval", "--checkpoint", str(tmp_path / "none.flsl")])
    assert code == 3
    assert "none.flsl" in err
    code, out, _ = flsl.cli(["keys"])
    assert code == 0 and "fl.rounds" in out
