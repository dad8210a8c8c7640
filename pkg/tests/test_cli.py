import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from gphlvm.cli import (
    HEATMAP_STOPS,
    build_parser,
    gamma_sweep,
    knee,
    load_run_config,
    main,
    parse_stress_csv,
)
from gphlvm.errors import ValidationError
from gphlvm.evalmotion import stress_report
from gphlvm.graphtax import balanced_tree, load_dataset, load_graph
from gphlvm.gplvm import GphlvmModel, TrainConfig, decode, load_model
from gphlvm.kernels import KernelSpec

SVG = "{http://www.w3.org/2000/svg}"
SUBCOMMANDS = ("train", "eval", "embed", "interpolate", "gamma-sweep", "gen-data")


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--depth", "2", "--points", "2", "--dim", "4", "--output-dir", str(d)]) == 0
    return d


def _config(tmp, data_dir, name, **fields):
    doc = {"graph": str(data_dir / "graph.json"), "dataset": str(data_dir / "dataset.csv"), "iterations": 20,
           "init_steps": 50, "seed": 0, **fields}
    path = tmp / f"{name}.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    tmp = tmp_path_factory.mktemp("runs")
    out = {}
    for name, fields in {
        "lorentz": {"regularizer": "stress", "gamma": 100.0},
        "bc": {"regularizer": "bc_stress", "gamma": 100.0},
        "euclidean": {"geometry": "euclidean", "regularizer": "stress", "gamma": 100.0},
    }.items():
        cfg = _config(tmp, data_dir, name, **fields)
        run = tmp / name
        assert main(["train", str(cfg), "--output-dir", str(run)]) == 0
        out[name] = run
    return out


# -- help and parsing ------------------------------------------------------------------------


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero_and_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "gphlvm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gamma-sweep" in res.stdout


def test_invalid_enum_fails_before_compute(tmp_path, data_dir, capsys):
    cfg = _config(tmp_path, data_dir, "bad", geometry="spherical")
    assert main(["train", str(cfg), "--output-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("ValidationError: ")
    assert not (tmp_path / "o" / "model.json").exists()


def test_unknown_config_field(tmp_path, data_dir):
    cfg = _config(tmp_path, data_dir, "typo", gama=3.0)
    with pytest.raises(ValidationError):
        load_run_config(cfg)


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "none.json")]) == 4
    assert capsys.readouterr().err.startswith("DataIOError: ")


def test_relative_paths_and_builtin_graph(tmp_path, data_dir):
    (tmp_path / "cfg.json").write_text(json.dumps({"graph": "grasp", "dataset": "d.csv", "regularizer": "stress"}))
    rc = load_run_config(tmp_path / "cfg.json")
    assert rc.graph == "grasp" and rc.train.taxonomy == "grasp"
    assert rc.dataset == tmp_path / "d.csv"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GPHLVM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["gen-data", "--depth", "1", "--points", "1", "--dim", "2"]) == 0
    assert (tmp_path / "env" / "graph.json").exists()


# -- gen-data ----------------------------------------------------------------------------------


def test_gen_data_round_trip_and_determinism(tmp_path, data_dir):
    graph = load_graph(data_dir / "graph.json")
    ds = load_dataset(data_dir / "dataset.csv", graph)
    assert len(graph) == 7 and ds.n == 14 and ds.d == 4
    assert main(["gen-data", "--depth", "2", "--points", "2", "--dim", "4", "--output-dir", str(tmp_path)]) == 0
    for f in ("graph.json", "dataset.csv"):
        assert (tmp_path / f).read_bytes() == (data_dir / f).read_bytes()


# -- train ------------------------------------------------------------------------------------


def test_train_outputs(trained):
    for name, run in trained.items():
        model = load_model(run / "model.json")
        lines = (run / "history.csv").read_text().splitlines()
        assert lines[0] == "iteration,l_map,stress,objective"
        assert len(lines) == 22
        assert (model.bc is not None) == (name == "bc")


def test_train_history_spot_check(trained):
    rows = (trained["lorentz"] / "history.csv").read_text().splitlines()[1:]
    objective = [float(r.split(",")[3]) for r in rows]
    assert objective[-1] > objective[0]


def test_train_deterministic(tmp_path, data_dir, trained):
    cfg = _config(tmp_path, data_dir, "lorentz", regularizer="stress", gamma=100.0)
    assert main(["train", str(cfg), "--output-dir", str(tmp_path / "again")]) == 0
    for f in ("history.csv", "model.json"):
        assert (tmp_path / "again" / f).read_bytes() == (trained["lorentz"] / f).read_bytes()


def test_train_variational_history(tmp_path, data_dir):
    cfg = _config(tmp_path, data_dir, "var", mode="variational", iterations=5, num_inducing=5)
    assert main(["train", str(cfg), "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "history.csv").read_text().splitlines()[0] == "iteration,elbo,stress,objective"


# -- eval ------------------------------------------------------------------------------------


def test_eval_round_trip(trained, tmp_path):
    run = trained["lorentz"]
    assert main(["eval", str(run / "model.json"), "--output-dir", str(tmp_path)]) == 0
    model = load_model(run / "model.json")
    rep = stress_report(model)
    parsed = parse_stress_csv((tmp_path / "stress.csv").read_text())
    assert parsed["mean"] == pytest.approx(rep.mean, abs=1e-9)
    assert parsed["std"] == pytest.approx(rep.std, abs=1e-9)
    assert parsed["pairs"] == rep.n_pairs
    assert np.allclose([e for *_, e in parsed["per_pair"]], [e for *_, e in rep.per_pair], atol=1e-9)
    lines = (tmp_path / "error_matrix.csv").read_text().splitlines()
    assert lines[0].split(",") == [f"p{i}" for i in range(model.n)]
    assert len(lines) == model.n + 1 and all(len(r.split(",")) == model.n for r in lines[1:])
    root = ET.parse(tmp_path / "error_matrix.svg").getroot()
    assert root.tag == f"{SVG}svg"


def test_eval_perfect_embedding(tmp_path):
    graph = balanced_tree(1, 2)
    m = GphlvmModel(geometry="euclidean", latent_dim=2, latents=np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
                    kernel=KernelSpec("euclidean_se"), noise=np.full(2, 0.1), prior_alpha=1.0,
                    observations=np.zeros((3, 2)), classes=("r.0", "r", "r.1"), graph=graph,
                    train_config=TrainConfig(geometry="euclidean"))
    m.save(tmp_path / "m.json")
    assert main(["eval", str(tmp_path / "m.json"), "--output-dir", str(tmp_path)]) == 0
    E = np.loadtxt(tmp_path / "error_matrix.csv", delimiter=",", skiprows=1)
    assert np.array_equal(E, np.zeros((3, 3)))
    assert len(HEATMAP_STOPS) >= 2


def test_eval_compatibility_error(trained, tmp_path, capsys):
    other = tmp_path / "other"
    main(["gen-data", "--depth", "2", "--points", "2", "--dim", "5", "--output-dir", str(other)])
    code = main(["eval", str(trained["lorentz"] / "model.json"), "--dataset", str(other / "dataset.csv"),
                 "--output-dir", str(tmp_path)])
    assert code == 2 and capsys.readouterr().err.startswith("CompatibilityError: ")


# -- embed -------------------------------------------------------------------------------------


def test_embed_training_rows(trained, data_dir, tmp_path):
    assert main(["embed", str(trained["bc"] / "model.json"), str(data_dir / "dataset.csv"), "--output-dir",
                 str(tmp_path)]) == 0
    model = load_model(trained["bc"] / "model.json")
    lines = (tmp_path / "embedding.csv").read_text().splitlines()
    assert lines[0] == "z0,z1,class,nearest_class"
    assert len(lines) - 1 == model.n
    z = np.array([[float(v) for v in r.split(",")[:2]] for r in lines[1:]])
    assert np.max(np.abs(z - model.latents[:, 1:])) <= 1e-12


def test_embed_unknown_class_names_row(trained, tmp_path, capsys):
    (tmp_path / "new.csv").write_text("f0,f1,f2,f3,class\n0,0,0,0,r\n1,1,1,1,zzz\n")
    assert main(["embed", str(trained["bc"] / "model.json"), str(tmp_path / "new.csv"), "--output-dir",
                 str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_embed_needs_back_constraints(trained, data_dir, tmp_path, capsys):
    code = main(["embed", str(trained["lorentz"] / "model.json"), str(data_dir / "dataset.csv"), "--output-dir",
                 str(tmp_path)])
    assert code != 0 and capsys.readouterr().err.startswith("CapabilityError: ")


# -- interpolate ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["lorentz", "euclidean"])
def test_interpolate_outputs(trained, tmp_path, name):
    model = load_model(trained[name] / "model.json")
    assert main(["interpolate", str(trained[name] / "model.json"), "--from", "0", "--to", str(model.n - 1),
                 "--steps", "12", "--output-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 13
    D = model.observations.shape[1]
    first = np.array([float(v) for v in lines[1].split(",")[3:3 + D]])
    last = np.array([float(v) for v in lines[-1].split(",")[3:3 + D]])
    assert np.allclose(first, decode(model, model.latents[0])[0], atol=1e-12)
    assert np.allclose(last, decode(model, model.latents[-1])[0], atol=1e-12)
    root = ET.parse(tmp_path / "trajectory.svg").getroot()
    assert len(root.findall(f"{SVG}path")) == 1
    if name == "lorentz":
        circles = root.findall(f"{SVG}circle")
        disk, points = circles[0], circles[1:]
        c, r = float(disk.get("cx")), float(disk.get("r"))
        assert len(points) == model.n
        for p in points:
            assert np.hypot(float(p.get("cx")) - c, float(p.get("cy")) - c) < r


def test_interpolate_coordinates_and_bad_index(trained, tmp_path, capsys):
    path = str(trained["lorentz"] / "model.json")
    assert main(["interpolate", path, "--from", "0.1,0.2", "--to=-0.3,0.0", "--steps", "5", "--output-dir",
                 str(tmp_path)]) == 0
    row = (tmp_path / "trajectory.csv").read_text().splitlines()[1].split(",")
    assert float(row[1]) == 0.1 and float(row[2]) == 0.2
    assert main(["interpolate", path, "--from", "0", "--to", "999", "--output-dir", str(tmp_path)]) == 2
    assert "out of range" in capsys.readouterr().err


def test_interpolate_svg_deterministic(trained, tmp_path):
    path = str(trained["lorentz"] / "model.json")
    for sub in ("a", "b"):
        main(["interpolate", path, "--from", "0", "--to", "3", "--output-dir", str(tmp_path / sub)])
    for f in ("trajectory.csv", "trajectory.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- gamma sweep ------------------------------------------------------------------------------


def test_gamma_sweep_report(tmp_path, data_dir):
    cfg = _config(tmp_path, data_dir, "sweep", geometry="euclidean", regularizer="stress", iterations=30)
    assert main(["gamma-sweep", str(cfg), "--gammas", "0,10,1000", "--seeds", "1", "--output-dir",
                 str(tmp_path)]) == 0
    lines = (tmp_path / "gamma_sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# knee: ")
    assert lines[1] == "gamma,l_map,stress,l_map_std,stress_std"
    assert len(lines) == 2 + 3


def test_gamma_sweep_needs_two_values(data_dir):
    graph = load_graph(data_dir / "graph.json")
    ds = load_dataset(data_dir / "dataset.csv", graph)
    with pytest.raises(ValidationError):
        gamma_sweep(ds, graph, TrainConfig(), [1.0], [0])


def test_knee_picks_corner():
    # l_MAP flat until the corner at gamma=100, then dropping; stress falls fast first
    assert knee([0, 10, 100, 1000], [0.0, -0.1, -0.2, -10.0], [10.0, 2.0, 1.0, 0.9]) in (10.0, 100.0)
