import csv
import json

import numpy as np
import pytest

import softnewt as sn
from softnewt.cli import main
from softnewt.serialize import dumps, load_path

INSTANCE_KEYS = {"schema_version", "n", "m", "d", "A1", "A2", "b", "w", "activation", "R", "beta"}


@pytest.fixture(scope="module")
def inst_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "inst.json"
    rc = main(["gen", "--n", "5", "--m", "3", "--d", "2", "--activation", "tanh",
               "--seed", "7", "--noise", "0.02", "--out", str(path)])
    assert rc == 0
    return str(path)


def test_gen_schema_and_planting(inst_file, tmp_path):
    doc = load_path(inst_file)
    assert INSTANCE_KEYS <= set(doc)
    assert doc["schema_version"] == 1
    inst = sn.instance_from_json(doc)
    assert (inst.n, inst.m, inst.d) == (5, 3, 2)
    st = sn.eval_forward(inst, np.zeros(2))
    assert abs(np.sum(st.f) - 1.0) <= 1e-12

    # noise = 0 plants a zero residual at x_plant
    clean = tmp_path / "clean.json"
    assert main(["gen", "--n", "4", "--m", "2", "--d", "2", "--activation", "sigmoid",
                 "--seed", "3", "--out", str(clean)]) == 0
    cdoc = load_path(clean)
    cinst = sn.instance_from_json(cdoc)
    st_plant = sn.eval_forward(cinst, np.array(cdoc["x_plant"]))
    assert st_plant.loss_L <= 1e-28


def test_gen_seed_class_instance(tmp_path):
    out = tmp_path / "s1class.json"
    assert main(["gen", "--n", "3", "--m", "2", "--d", "2", "--activation", "tanh",
                 "--seed", "7", "--out", str(out)]) == 0
    doc = load_path(out)
    assert INSTANCE_KEYS <= set(doc)
    inst = sn.instance_from_json(doc)
    st = sn.eval_forward(inst, np.zeros(2))
    assert abs(np.sum(st.f) - 1.0) <= 1e-12 and np.isfinite(st.loss_tot)


def test_gen_single_coordinate():
    import tempfile, os

    with tempfile.TemporaryDirectory() as td:
        out = os.path.join(td, "one.json")
        assert main(["gen", "--n", "1", "--m", "1", "--d", "1", "--activation", "identity",
                     "--seed", "0", "--out", out]) == 0
        inst = sn.instance_from_json(load_path(out))
        np.testing.assert_allclose(sn.eval_forward(inst, np.array([0.3])).f, [1.0])


def test_run_exact_and_stored_optimum(inst_file, tmp_path):
    out1 = tmp_path / "run1"
    rc = main(["run", "--instance", inst_file, "--mode", "exact", "--x0", "gaussian",
               "--x0-scale", "0.05", "--eps", "1e-9", "--seed", "5",
               "--out-dir", str(out1), "--emit", "report_json,trace_csv"])
    assert rc == 0
    doc = load_path(out1 / "report.json")
    assert doc["golden"]["status"] == "converged"
    assert doc["golden"]["r_t"][-1] <= 1e-9
    assert "wall_times_ms" not in doc["golden"]
    assert "wall_times_ms" in doc["timing"]

    with open(out1 / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "r_t", "ratio", "grad_norm", "eps_sketch", "millis"]
    assert len(rows) == len(doc["golden"]["grad_norms"]) + 1
    assert rows[1][2] == ""  # no ratio at t=0
    assert rows[1][4] == ""  # exact mode has no sketch eps

    # restarting from the stored final iterate converges in zero iterations
    out2 = tmp_path / "run2"
    rc = main(["run", "--instance", inst_file, "--mode", "exact", "--x0", "stored",
               "--x0-path", str(out1 / "report.json"), "--eps", "1e-9",
               "--out-dir", str(out2)])
    assert rc == 0
    doc2 = load_path(out2 / "report.json")
    assert doc2["golden"]["n_iters"] == 0


def test_run_max_iters_zero_exit_2(inst_file, tmp_path):
    rc = main(["run", "--instance", inst_file, "--x0", "gaussian", "--max-iters", "0",
               "--eps", "1e-9", "--out-dir", str(tmp_path / "r")])
    assert rc == 2
    doc = load_path(tmp_path / "r" / "report.json")
    assert doc["golden"]["status"] == "max_iters"


def test_run_sketched_emits_bounds(inst_file, tmp_path):
    out = tmp_path / "sk"
    rc = main(["run", "--instance", inst_file, "--mode", "sketched", "--x0", "gaussian",
               "--x0-scale", "0.02", "--eps", "1e-8", "--seed", "11",
               "--out-dir", str(out), "--emit", "report_json,bounds_json,grad_json,bterms_json"])
    assert rc == 0
    doc = load_path(out / "report.json")
    assert doc["golden"]["status"] == "converged"
    assert all(e is not None for e in doc["golden"]["sketch_eps_per_iter"])
    cert = doc["golden"]["basin_certificate"]
    assert cert["analytic"] is False  # the analytic constant is astronomically large
    assert cert["empirical"] is True
    bdoc = load_path(out / "bounds.json")
    assert bdoc["schema_version"] == 1 and "tightness" in bdoc

    gdoc = load_path(out / "gradient.json")
    assert {"P", "Q2", "q2", "grad_L", "grad_reg", "grad_tot"} <= set(gdoc)
    np.testing.assert_allclose(
        np.asarray(gdoc["grad_tot"]),
        np.asarray(gdoc["grad_L"]) + np.asarray(gdoc["grad_reg"]),
        atol=1e-18,
    )
    tdoc = load_path(out / "b_terms.json")
    assert set(tdoc["frobenius_norms"]) == {f"B{i}" for i in range(1, 13)}
    assert all(v >= 0.0 for v in tdoc["frobenius_norms"].values())


def test_run_determinism_byte_identical(inst_file, tmp_path):
    blobs = set()
    for rep in range(3):
        out = tmp_path / f"det{rep}"
        rc = main(["run", "--instance", inst_file, "--mode", "sketched", "--x0", "gaussian",
                   "--seed", "21", "--eps", "1e-8", "--out-dir", str(out)])
        assert rc == 0
        blobs.add(dumps(load_path(out / "report.json")["golden"]))
    assert len(blobs) == 1


def test_run_missing_instance_exit_3(tmp_path, capsys):
    rc = main(["run", "--instance", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)])
    assert rc == 3
    err = capsys.readouterr().err
    assert json.loads(err)["error"] == "configuration"


def test_verify_passes(inst_file, tmp_path, capsys):
    out = tmp_path / "verify.json"
    rc = main(["verify", "--instance", inst_file, "--seed", "1", "--trials", "8",
               "--out", str(out)])
    assert rc == 0
    doc = load_path(out)
    assert doc["all_passed"] is True
    names = {c["name"] for c in doc["checks"]}
    assert {"softmax_normalization", "gradient_vs_finite_difference",
            "hessian_vs_finite_difference", "bound_soundness",
            "sketch_sandwich_rate"} <= names
    assert "[pass]" in capsys.readouterr().out


def test_bounds_table(inst_file, tmp_path, capsys):
    out = tmp_path / "bounds.json"
    rc = main(["bounds", "--instance", inst_file, "--probes", "10", "--seed", "2",
               "--out", str(out)])
    assert rc == 0
    txt = capsys.readouterr().out
    assert "tightness" in txt and "psd_bound" in txt
    doc = load_path(out)
    assert doc["n_admissible"] == 10
    assert all(doc["tightness"][k] <= 1.0 for k in doc["tightness"] if k.startswith("norm_"))


def test_verify_on_seed_instance(s1_instance, tmp_path):
    path = tmp_path / "s1.json"
    from softnewt.serialize import dump_path

    dump_path(sn.instance_to_json(s1_instance), path)
    out = tmp_path / "margins.json"
    rc = main(["verify", "--instance", str(path), "--seed", "0", "--trials", "20",
               "--out", str(out)])
    assert rc == 0
    doc = load_path(out)
    assert doc["all_passed"] is True
    # margins are deterministic for a fixed seed
    out2 = tmp_path / "margins2.json"
    assert main(["verify", "--instance", str(path), "--seed", "0", "--trials", "20",
                 "--out", str(out2)]) == 0
    assert dumps(load_path(out)) == dumps(load_path(out2))


def test_run_missing_x0_path_exit_3(inst_file, tmp_path):
    rc = main(["run", "--instance", inst_file, "--x0", "stored",
               "--x0-path", str(tmp_path / "absent.json"), "--out-dir", str(tmp_path)])
    assert rc == 3


def test_artifact_float_round_trip(inst_file):
    doc = load_path(inst_file)
    txt1 = dumps(doc)
    txt2 = dumps(json.loads(txt1))
    assert txt1 == txt2
    back = sn.instance_to_json(sn.instance_from_json(doc))
    assert np.array_equal(np.asarray(back["A1"]), np.asarray(doc["A1"]))
