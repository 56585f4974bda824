import json

import numpy as np
import pytest

from tca.cli import main
from tca.core import load_csv


def _gen(tmp_path, name, *args):
    out = tmp_path / name
    assert main(["gen", "--out", str(out), *args]) == 0
    return out


def test_gen_is_byte_identical(tmp_path):
    a = _gen(tmp_path, "a", "--m", "4", "--n", "1000", "--seed", "7")
    b = _gen(tmp_path, "b", "--m", "4", "--n", "1000", "--seed", "7")
    for f in ("data.csv", "truth.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    truth = json.loads((a / "truth.json").read_text())
    assert truth["generator_version"] and truth["version"]
    assert load_csv(a / "data.csv").samples.shape == (1000, 4)


def test_gen_records_treewidth(tmp_path):
    out = _gen(tmp_path, "t", "--m", "6", "--treewidth", "3", "--n", "200")
    truth = json.loads((out / "truth.json").read_text())
    assert truth["treewidth"] == 3 and truth["tree"] is None


def test_gen_rejects_bad_treewidth(tmp_path, capsys):
    assert main(["gen", "--m", "4", "--treewidth", "4", "--out", str(tmp_path)]) != 0
    assert "treewidth" in capsys.readouterr().err


def test_fit_then_eval_recovers_tree(tmp_path, capsys):
    out = _gen(tmp_path, "g", "--m", "4", "--n", "1000", "--seed", "1")
    res = tmp_path / "result.json"
    code = main(["fit", str(out / "data.csv"), "--seed", "1", "--out", str(res)])
    assert code in (0, 4)
    capsys.readouterr()
    assert main(["eval", "--truth", str(out / "truth.json"), "--result", str(res)]) == 0
    metrics = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert metrics["e_t"] == 0


@pytest.mark.parametrize("contrast", ["kde", "kgv"])
def test_fit_documents_for_both_contrasts(tmp_path, contrast):
    out = _gen(tmp_path, "g", "--m", "3", "--n", "300", "--seed", "2")
    res = tmp_path / f"{contrast}.json"
    code = main(["fit", str(out / "data.csv"), "--contrast", contrast, "--max-iters", "3",
                 "--out", str(res)])
    assert code in (0, 4)
    doc = json.loads(res.read_text())
    assert doc["version"] and doc["config"]["contrast"] == contrast
    assert np.asarray(doc["w"]).shape == (3, 3) and len(doc["tree"]) == 2
    assert doc["converged"] == (code == 0)


def test_fit_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n4,5,6\n7,8\n")
    assert main(["fit", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_fit_rejects_bad_flags(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("1,2\n3,4\n5,7\n")
    assert main(["fit", str(data), "--bandwidth", "-1"]) == 2
    with pytest.raises(SystemExit) as err:
        main(["fit", str(data), "--contrast", "mi"])
    assert err.value.code == 2


def test_density_report(tmp_path, capsys):
    out = _gen(tmp_path, "g", "--m", "3", "--n", "1000", "--seed", "3")
    res = tmp_path / "r.json"
    main(["fit", str(out / "data.csv"), "--seed", "3", "--out", str(res)])
    dens = tmp_path / "dens"
    args = ["density", str(out / "data.csv"), "--fit", str(res), "--truth",
            str(out / "truth.json"), "--kmax", "4", "--out", str(dens)]
    assert main(args) == 0
    report = json.loads((dens / "density_report.json").read_text())
    assert {"GAU", "IND", "CL", "GMM", "TCA"} <= set(report["loglik"])
    assert report["n_train"] == 800 and report["n_test"] == 200
    assert report["loglik"]["TCA"] >= report["loglik"]["CL"]
    assert (dens / "model.json").exists()
    assert main(args) == 0
    again = json.loads((dens / "density_report.json").read_text())
    assert again == report


def test_benchmark_cli(tmp_path):
    out = tmp_path / "bench"
    assert main(["benchmark", "smoke", "--reps", "2", "--workers", "1", "--out", str(out)]) == 0
    assert (out / "smoke_summary.csv").exists()
    assert main(["benchmark", "nope", "--out", str(out)]) == 2


def test_eval_rejects_wrong_document(tmp_path):
    doc = tmp_path / "x.json"
    doc.write_text(json.dumps({"version": "something-else"}))
    assert main(["eval", "--truth", str(doc), "--result", str(doc)]) == 2
