import datetime as dt
import subprocess
import sys

import numpy as np
import pytest

from advtkge import checkpoint as ckpt
from advtkge import trainer
from advtkge.cli import SAMPLE_HEADER, main
from advtkge.config import RunConfig
from advtkge.dataset import load_prepared
from advtkge.evaluation import RankMetrics
from advtkge.numerics import NumericError, pca_project
from advtkge.synthetic import make_typed_tkg

TRAIN_ARGS = ["--set", "epochs=2", "--set", "dim=8", "--set", "batch_size=32", "--set", "valid_interval=1", "--set", "n_candidates=16"]


def _write_split(path, quads):
    day0 = dt.date(2014, 1, 1)
    path.write_text(
        "".join(f"Entity {s}\trel_{p}\tEntity {o}\t{(day0 + dt.timedelta(int(t))).isoformat()}\n" for s, p, o, t in quads)
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    kg = make_typed_tkg(n_entities=30, n_types=3, n_relations=3, n_buckets=6, n_facts=300, seed=1)
    raw = root / "raw"
    raw.mkdir()
    seen = set(kg.train[:, 0]) | set(kg.train[:, 2])
    for name, split in (("train", kg.train), ("valid", kg.valid), ("test", kg.test)):
        if name != "train":
            split = split[np.isin(split[:, 0], list(seen)) & np.isin(split[:, 2], list(seen))]
        _write_split(raw / f"{name}.txt", split)
    assert main(["-q", "prepare", str(raw), str(root / "prep")]) == 0
    assert main(["-q", "train", str(root / "prep"), str(root / "adv"), *TRAIN_ARGS]) == 0
    assert main(["-q", "train", str(root / "prep"), str(root / "base"), *TRAIN_ARGS, "--set", "mode=baseline"]) == 0
    return root


def test_train_outputs(workspace):
    adv = workspace / "adv"
    assert {p.name for p in adv.iterdir()} == {"checkpoint.bin", "trace.csv", "effective.cfg"}
    lines = (adv / "trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,L_D,L_G,val_MRR" and len(lines) == 3
    assert all(cell != "" for cell in lines[1].split(","))
    base = (workspace / "base" / "trace.csv").read_text().splitlines()
    assert base[1].split(",")[2] == ""
    cfg = RunConfig.from_file(adv / "effective.cfg")
    assert (cfg.epochs, cfg.dim, cfg.mode) == (2, 8, "adversarial")
    cp = ckpt.load(adv / "checkpoint.bin")
    assert cp.generator is not None and cp.meta["epochs_run"] == 2
    assert ckpt.load(workspace / "base" / "checkpoint.bin").generator is None


def test_rerun_from_effective_config_is_byte_identical(workspace, tmp_path):
    out = tmp_path / "again"
    assert main(["-q", "train", str(workspace / "prep"), str(out), "--config", str(workspace / "adv" / "effective.cfg")]) == 0
    for name in ("trace.csv", "checkpoint.bin", "effective.cfg"):
        assert (out / name).read_bytes() == (workspace / "adv" / name).read_bytes()


def test_baseline_one_epoch(workspace, tmp_path):
    out = tmp_path / "one"
    assert main(["-q", "train", str(workspace / "prep"), str(out), *TRAIN_ARGS, "--set", "mode=baseline", "--set", "epochs=1"]) == 0
    assert len((out / "trace.csv").read_text().splitlines()) == 2


def test_eval_csv_and_ranks(workspace, tmp_path, capsys):
    cp = str(workspace / "adv" / "checkpoint.bin")
    prep = str(workspace / "prep")
    assert main(["-q", "eval", cp, prep, "--ranks", str(tmp_path / "r.tsv")]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header == "split," + RankMetrics.CSV_HEADER
    vals = dict(zip(header.split(","), row.split(",")))
    mr, mrr, h1, h3, h10 = (float(vals[k]) for k in ("mr", "mrr", "hits1", "hits3", "hits10"))
    assert mr >= 1 and mrr >= h1 and h1 <= h3 <= h10 <= 1
    ranks = (tmp_path / "r.tsv").read_text().splitlines()
    assert ranks[0] == "slot\thead\trelation\ttail\tbucket\trank"
    rs = [float(line.split("\t")[-1]) for line in ranks[1:]]
    assert len(rs) == int(vals["query_count"])
    assert RankMetrics.from_ranks(rs).mrr == mrr
    assert main(["-q", "eval", cp, prep, "--split", "train", "--out", str(tmp_path / "m.csv")]) == 0
    assert (tmp_path / "m.csv").read_text().startswith("split,")


def test_sample_negatives(workspace, capsys):
    cp = str(workspace / "adv" / "checkpoint.bin")
    prep = str(workspace / "prep")
    assert main(["-q", "sample-negatives", cp, prep, "-n", "0"]) == 0
    assert capsys.readouterr().out == SAMPLE_HEADER + "\n"
    assert main(["-q", "sample-negatives", cp, prep, "-n", "25", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 26
    ds = load_prepared(workspace / "prep")
    for line in lines[1:]:
        cells = line.split("\t")
        pos, uni, gen = cells[0:4], cells[4:8], cells[8:12]
        for fact in (uni, gen):
            assert sum(a != b for a, b in zip(pos, fact)) == 1
            assert fact[1] == pos[1] and fact[3] == pos[3]
            assert fact[0] in ds.vocab.entity_ids and fact[2] in ds.vocab.entity_ids
    assert main(["-q", "sample-negatives", cp, prep, "-n", "25", "--seed", "3"]) == 0
    assert capsys.readouterr().out.splitlines() == lines


def test_sample_negatives_baseline_checkpoint(workspace, capsys):
    code = main(["-q", "sample-negatives", str(workspace / "base" / "checkpoint.bin"), str(workspace / "prep")])
    assert code == 2
    assert "generator" in capsys.readouterr().err


def test_export_embeddings(workspace, tmp_path, capsys):
    cp = str(workspace / "adv" / "checkpoint.bin")
    prep = str(workspace / "prep")
    assert main(["-q", "export-embeddings", cp, prep]) == 0
    rows = capsys.readouterr().out.splitlines()
    ds = load_prepared(workspace / "prep")
    assert len(rows) == ds.vocab.n_entities and all(len(r.split("\t")) == 9 for r in rows)
    assert main(["export-embeddings", cp, prep, "--entities", "Entity 1,Nobody", "--pca-k", "0"]) == 0
    out = capsys.readouterr()
    assert len(out.out.splitlines()) == 1 and "Nobody" in out.err
    (tmp_path / "names.txt").write_text("Entity 1\nEntity 2\nEntity 3\n")
    assert main(["-q", "export-embeddings", cp, prep, "--entities", f"@{tmp_path / 'names.txt'}", "--pca-k", "2"]) == 0
    rows = [r.split("\t") for r in capsys.readouterr().out.splitlines()]
    assert [r[0] for r in rows] == ["Entity 1", "Entity 2", "Entity 3"] and all(len(r) == 3 for r in rows)
    model = ckpt.load(cp).model
    ids = [ds.vocab.entity_ids[r[0]] for r in rows]
    np.testing.assert_allclose(np.array([[float(x) for x in r[1:]] for r in rows]), pca_project(model.entity_vectors(np.array(ids)), 2))


def test_export_time_aware(workspace, tmp_path, capsys):
    out = tmp_path / "de"
    assert main(["-q", "train", str(workspace / "prep"), str(out), *TRAIN_ARGS, "--set", "model=de-transe", "--set", "mode=baseline"]) == 0
    buckets = ",".join(str(b) for b in range(6))
    assert main(["-q", "export-embeddings", str(out / "checkpoint.bin"), str(workspace / "prep"), "--entities", "Entity 1", "--buckets", buckets, "--pca-k", "2"]) == 0
    rows = [r.split("\t") for r in capsys.readouterr().out.splitlines()]
    assert len(rows) == 6 and all(len(r) == 4 for r in rows)
    assert [r[1] for r in rows] == [str(b) for b in range(6)]


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["eval"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["prepare", "/nonexistent/raw", "/tmp/never"],
        ["train", "/nonexistent/prep", "/tmp/never"],
        ["train", "/nonexistent/prep", "/tmp/never", "--set", "bogus=1"],
        ["eval", "/nonexistent/c.bin", "/nonexistent/prep"],
    ],
)
def test_data_errors_exit_2(argv):
    assert main(["-q", *argv]) == 2


def test_export_bad_pca(workspace):
    assert main(["-q", "export-embeddings", str(workspace / "adv" / "checkpoint.bin"), str(workspace / "prep"), "--pca-k", "4"]) == 1


def test_incompatible_checkpoint(workspace, tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    for name in ("train", "valid", "test"):
        _write_split(raw / f"{name}.txt", [(0, 0, 1, 0), (1, 0, 2, 1)])
    assert main(["-q", "prepare", str(raw), str(tmp_path / "p")]) == 0
    assert main(["-q", "eval", str(workspace / "adv" / "checkpoint.bin"), str(tmp_path / "p")]) == 2


def test_numeric_abort_exit_code(workspace, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("nan")

    monkeypatch.setattr(trainer, "discriminator_phase", boom)
    out = tmp_path / "abort"
    assert main(["-q", "train", str(workspace / "prep"), str(out), *TRAIN_ARGS, "--set", "epochs=6"]) == 3
    assert (out / "checkpoint.bin").exists()


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "advtkge.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sample-negatives" in res.stdout


def test_filter_false_negatives_flag(workspace, tmp_path):
    out = tmp_path / "ffn"
    assert main(["-q", "train", str(workspace / "prep"), str(out), *TRAIN_ARGS, "--set", "epochs=1", "--filter-false-negatives"]) == 0
    assert RunConfig.from_file(out / "effective.cfg").filter_false_negatives is True
