import csv
import json

import numpy as np
import pytest

from hgdiffuser.cli import main
from hgdiffuser.evaluation.benchmark import CSV_COLUMNS
from hgdiffuser.network import load_params


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--preset", "smoke", "--out", str(data), "--objects", "box", "cylinder"]) == 0
    ckpt = root / "m.ckpt"
    assert main(["train", "--preset", "smoke", "--data", str(data), "--out", str(ckpt)]) == 0
    return root, data, ckpt


def first(path, pattern):
    return sorted(path.glob(pattern))[0]


def test_gen_data_outputs(work, tmp_path):
    root, data, _ = work
    assert json.loads((data / "meta.json").read_text())["version"] == 1
    assert (data / "effective_config.yaml").exists()
    assert main(["gen-data", "--preset", "smoke", "--out", str(data)]) == 2
    again = tmp_path / "again"
    assert main(["gen-data", "--preset", "smoke", "--out", str(again), "--objects", "box", "cylinder"]) == 0
    for f in (data / "objects").glob("*.json"):
        assert (again / "objects" / f.name).read_bytes() == f.read_bytes()


def test_invalid_kind_is_usage_error(tmp_path, caplog):
    assert main(["gen-data", "--preset", "smoke", "--out", str(tmp_path / "x"), "--objects", "sphere"]) == 2
    assert "box, cylinder, lshape" in caplog.text


def test_train_outputs_and_errors(work, tmp_path, caplog):
    root, data, ckpt = work
    _, meta = load_params(ckpt)
    assert meta["epoch"] == 2
    rows = list(csv.DictReader(open(f"{ckpt}.loss.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    assert (root / "m.ckpt.loss.png").exists() and (root / "m.ckpt.config.yaml").exists()
    assert main(["train", "--preset", "smoke", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "a")]) == 2
    assert "nope" in caplog.text


def test_resume_continues_epoch_numbering(work, tmp_path):
    _, data, ckpt = work
    out = tmp_path / "r.ckpt"
    assert main(["train", "--preset", "smoke", "--data", str(data), "--out", str(out), "--resume", str(ckpt),
                 "--epochs", "3"]) == 0
    _, meta = load_params(out)
    assert meta["epoch"] == 3 and len(meta["losses"]) == 3
    rows = list(csv.DictReader(open(f"{out}.loss.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    # an uninterrupted 3-epoch run lands on the same parameters
    full = tmp_path / "f.ckpt"
    assert main(["train", "--preset", "smoke", "--data", str(data), "--out", str(full), "--epochs", "3"]) == 0
    assert np.array_equal(load_params(full)[0].flat, load_params(out)[0].flat)


def test_sample_guided_unguided_and_counts(work, tmp_path):
    _, data, ckpt = work
    obj = first(data / "objects", "*.json")
    demo = first(data / "demos", f"{obj.stem}__*.json")
    base = ["sample", "--preset", "smoke", "--ckpt", str(ckpt), "--object", str(obj), "--seed", "4"]
    assert main(base + ["--n", "5", "--out", str(tmp_path / "u.json"), "--ply", str(tmp_path / "u.ply"),
                        "--plot", str(tmp_path / "u.png"), "--trajectory", str(tmp_path / "u.ndjson")]) == 0
    u = json.loads((tmp_path / "u.json").read_text())
    assert len(u["samples"]) == 5
    assert (tmp_path / "u.ply").exists() and (tmp_path / "u.png").exists()
    assert len((tmp_path / "u.ndjson").read_text().splitlines()) == 4 + 2
    assert main(base + ["--n", "5", "--out", str(tmp_path / "g.json"), "--demo", str(demo), "--alpha", "0"]) == 0
    g = json.loads((tmp_path / "g.json").read_text())
    assert [s["pose"] for s in g["samples"]] == [s["pose"] for s in u["samples"]]
    assert all("constraint_ok" in s for s in g["samples"])
    assert main(base + ["--n", "5", "--out", str(tmp_path / "u2.json")]) == 0
    assert (tmp_path / "u2.json").read_text() == (tmp_path / "u.json").read_text()


def test_sample_demo_object_mismatch(work, tmp_path):
    _, data, ckpt = work
    objs = sorted((data / "objects").glob("*.json"))
    demo = first(data / "demos", f"{objs[1].stem}__*.json")
    assert main(["sample", "--preset", "smoke", "--ckpt", str(ckpt), "--object", str(objs[0]), "--demo", str(demo),
                 "--out", str(tmp_path / "x.json")]) == 2


def test_extract_constraints_and_no_contact(work, tmp_path):
    _, data, _ = work
    obj = first(data / "objects", "*.json")
    demo = first(data / "demos", f"{obj.stem}__*.json")
    assert main(["extract-constraints", "--object", str(obj), "--demo", str(demo), "--out", str(tmp_path / "c.json")]) == 0
    c = json.loads((tmp_path / "c.json").read_text())
    assert set(c) == {"p_region", "d_direct", "tau_region", "tau_direct"}
    far = json.loads(demo.read_text())
    far["hand_points"] = [[10.0, 10.0, 10.0]]
    (tmp_path / "far.json").write_text(json.dumps(far))
    assert main(["extract-constraints", "--object", str(obj), "--demo", str(tmp_path / "far.json")]) == 3


def test_bench_rows_and_rerun(work, tmp_path):
    _, data, ckpt = work
    for name in ("b1", "b2"):
        assert main(["bench", "--preset", "smoke", "--ckpt", str(ckpt), "--data", str(data),
                     "--out", str(tmp_path / name)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "b1" / "bench.csv")))
    assert list(rows[0]) == CSV_COLUMNS
    methods = {(r["method"], r["n_samples"]) for r in rows}
    assert len(methods) == 6
    assert (tmp_path / "b1" / "bench.png").exists() and (tmp_path / "b1" / "bench.json").exists()
    rows2 = list(csv.DictReader(open(tmp_path / "b2" / "bench.csv")))
    assert [r["success"] for r in rows] == [r["success"] for r in rows2]
    assert main(["eval", "--preset", "smoke", "--ckpt", str(ckpt), "--data", str(data), "--method", "guided",
                 "--n-samples", "2", "--out", str(tmp_path / "e")]) == 0
    assert {r["method"] for r in csv.DictReader(open(tmp_path / "e" / "eval.csv"))} == {"guided"}
    assert main(["bench", "--preset", "smoke", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(data),
                 "--out", str(tmp_path / "b3")]) == 2
