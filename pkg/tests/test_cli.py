import pytest
from click.testing import CliRunner

from gmn.cli import main
from gmn.params import GMNConfig
from gmn.retrieve import read_embeddings

SMALL = ["--users", "60", "--videos", "40", "--items", "60", "--topics", "4"]


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert invoke("synth", *SMALL, "--seed", 1, "--out", data).exit_code == 0
    cfg = root / "model.cfg"
    cfg.write_text(GMNConfig(d=4, hidden=8, k1=2, k2=2, dropout=0.0, epochs=2).to_text())
    ckpt = root / "model.ckpt"
    res = invoke("train", "--config", cfg, "--graph", data / "graph.gmng", "--val", data / "val.tsv",
                 "--out", ckpt, "--no-early-stopping")
    assert res.exit_code == 0, res.output
    return root, data, cfg, ckpt, res.output


def test_train_prints_epoch_table(workspace):
    *_, out = workspace
    lines = [line for line in out.strip().split("\n") if not line.startswith("#")]  # drop stderr timing
    assert lines[0].startswith("epoch\tbpr_loss\tauc")
    assert [line.split("\t")[0] for line in lines[1:]] == ["1", "2"]


def test_build_graph_from_logs(tmp_path):
    (tmp_path / "v.tsv").write_text("u1\tv1\t1\nu1\tv2\t2\nu2\tv1\t3\nu1\tv1\t4\n")
    (tmp_path / "i.tsv").write_text("u1\ti1\t1\nu2\ti2\t2\n")
    res = invoke("build-graph", "--videos", tmp_path / "v.tsv", "--items", tmp_path / "i.tsv",
                 "--out", tmp_path / "g.gmng")
    assert res.exit_code == 0
    stats = dict(line.split("\t") for line in res.output.strip().split("\n"))
    assert stats["uv_edges"] == "3" and stats["duplicates"] == "1"
    assert (tmp_path / "g.gmng").exists()


def test_malformed_log_exits_2(tmp_path):
    (tmp_path / "v.tsv").write_text("u1\tv1\t1\nnot a row\n")
    (tmp_path / "i.tsv").write_text("u1\ti1\t1\n")
    res = CliRunner().invoke(main, ["build-graph", "--videos", str(tmp_path / "v.tsv"),
                                    "--items", str(tmp_path / "i.tsv"), "--out", str(tmp_path / "g")])
    assert res.exit_code == 2
    assert "line 2" in res.output


def test_eval(workspace):
    _, data, _, ckpt, _ = workspace
    res = invoke("eval", "--checkpoint", ckpt, "--graph", data / "graph.gmng", "--samples", data / "val.tsv")
    assert res.exit_code == 0
    head, row = res.output.strip().split("\n")[:2]
    assert head.split("\t")[0] == "auc"
    assert 0 <= float(row.split("\t")[0]) <= 100


def test_retrieve_with_dumps(workspace):
    _, data, _, ckpt, _ = workspace
    res = invoke("retrieve", "--checkpoint", ckpt, "--graph", data / "graph.gmng", "--user", "u0", "--k", 5,
                 "--dump-relevance", "--dump-preference")
    assert res.exit_code == 0
    lines = res.output.split("\n")
    scores = [float(line.split("\t")[1]) for line in lines[:5]]
    assert scores == sorted(scores, reverse=True)
    assert "# node relevance (row-normalised)" in res.output
    assert "# preference relevance (column-normalised)" in res.output


def test_retrieve_unknown_user_exits_2(workspace):
    _, data, _, ckpt, _ = workspace
    res = CliRunner().invoke(main, ["retrieve", "--checkpoint", str(ckpt), "--graph", str(data / "graph.gmng"),
                                    "--user", "nobody"])
    assert res.exit_code == 2


def test_export(workspace, tmp_path):
    _, data, _, ckpt, _ = workspace
    res = invoke("export", "--checkpoint", ckpt, "--graph", data / "graph.gmng", "--out", tmp_path)
    assert res.exit_code == 0
    keys, vecs = read_embeddings(tmp_path / "videos.emb")
    assert len(keys) == 40 and vecs.shape[1] == 4


def test_checkpoint_graph_mismatch_exits_2(workspace, tmp_path):
    _, _, _, ckpt, _ = workspace
    (tmp_path / "v.tsv").write_text("u1\tv1\t1\n")
    (tmp_path / "i.tsv").write_text("u1\ti1\t1\n")
    (tmp_path / "f.tsv").write_text("u1\tuser_id:0\tage:3\nv1\tvideo_id:0\ni1\titem_id:0\n")
    invoke("build-graph", "--videos", tmp_path / "v.tsv", "--items", tmp_path / "i.tsv",
           "--features", tmp_path / "f.tsv", "--out", tmp_path / "g.gmng")
    res = CliRunner().invoke(main, ["eval", "--checkpoint", str(ckpt), "--graph", str(tmp_path / "g.gmng"),
                                    "--samples", str(tmp_path / "v.tsv")])
    assert res.exit_code == 2


def test_gradcheck_command():
    res = invoke("gradcheck")
    assert res.exit_code == 0
    assert "0 failed" in res.output


def test_bad_config_exits_2(workspace, tmp_path):
    _, data, _, _, _ = workspace
    (tmp_path / "bad.cfg").write_text("d = 8\nwarp_factor = 9\n")
    res = CliRunner().invoke(main, ["train", "--config", str(tmp_path / "bad.cfg"), "--graph",
                                    str(data / "graph.gmng"), "--out", str(tmp_path / "x")])
    assert res.exit_code == 2
    assert "warp_factor" in res.output


def test_ablate_and_sweep(workspace, tmp_path):
    _, data, cfg, _, _ = workspace
    res = invoke("ablate", "--data", data, "--config", cfg, "--variants", "full,no-pref-matching",
                 "--out", tmp_path / "a.tsv")
    assert res.exit_code == 0
    assert (tmp_path / "a.tsv").read_text() == res.output
    assert [r.split("\t")[0] for r in res.output.strip().split("\n")[1:]] == ["full", "no-pref-matching"] * 2
    res = invoke("sweep", "--knob", "k", "--values", "1,2", *SMALL, "--config", cfg, "--seeds", "0")
    assert res.exit_code == 0
    assert res.output.startswith("preference_count\tseed")


def test_bad_variant_and_knob_exit_2(workspace):
    _, data, cfg, _, _ = workspace
    r = CliRunner()
    assert r.invoke(main, ["ablate", "--data", str(data), "--variants", "nope"]).exit_code == 2
    assert r.invoke(main, ["sweep", "--data", str(data), "--knob", "lr", "--values", "1"]).exit_code == 2
    assert r.invoke(main, ["sweep", "--data", str(data), "--knob", "k", "--values", "x"]).exit_code == 2


def test_missing_file_is_usage_error():
    res = CliRunner().invoke(main, ["eval", "--checkpoint", "/nonexistent", "--graph", "/x", "--samples", "/y"])
    assert res.exit_code == 2
