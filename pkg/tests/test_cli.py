"""End-to-end CLI checks through main(): artifacts, digest guards, exit
codes, and byte determinism.  Everything runs in-process on tiny graphs."""

import filecmp
import json

import numpy as np
import pytest

from shift_gcl.cli import load_checkpoint, load_config, main
from shift_gcl.datasets import load_dataset

TINY = ["--base-nodes", "30", "--num-houses", "8"]


def _gen(tmp_path, name="ds.json", extra=()):
    out = tmp_path / name
    rc = main(["generate", "cbas", "--out", str(out), "--seed", "0",
               *TINY, *extra])
    assert rc == 0
    return out


def _cfg(tmp_path, name="cfg.json", train=None, top=None):
    doc = {
        "train": {"epochs": 3, "eval_every": 2, "num_prototypes": 8,
                  "prototype_steps": 2, "ascent_steps": 2},
        "encoder": {"hidden_dim": 16},
        "probe": {"probe_epochs": 30},
    }
    if train:
        doc["train"].update(train)
    if top:
        doc.update(top)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# generate

def test_generate_cbas_writes_dataset(tmp_path, capsys):
    out = _gen(tmp_path)
    ds = load_dataset(out)
    assert ds.graph.n == 70
    assert "config_digest" in ds.meta
    assert "70 nodes" in capsys.readouterr().out


def test_generate_refuses_overwrite_without_force(tmp_path, capsys):
    out = _gen(tmp_path)
    rc = main(["generate", "cbas", "--out", str(out), "--seed", "1", *TINY])
    assert rc == 2
    assert "already exists" in capsys.readouterr().err
    assert main(["generate", "cbas", "--out", str(out), "--seed", "1",
                 *TINY, "--force"]) == 0


def test_generate_cbas_covariate(tmp_path):
    out = _gen(tmp_path, extra=["--shift", "covariate", "--noise-std", "0.0"])
    ds = load_dataset(out)
    assert ds.meta["shift_kind"] == "covariate"


def test_generate_spurious_directory(tmp_path):
    out = tmp_path / "envs"
    rc = main(["generate", "spurious", "--out", str(out), "--seed", "0",
               "--n-nodes", "50", "--d1", "3", "--d2", "3", "--num-envs", "4"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["files"]) == 4
    assert manifest["files"]["0"]["role"] == "train"
    assert manifest["files"]["2"]["role"] == "ood_test"
    for entry in manifest["files"].values():
        env_ds = load_dataset(out / entry["file"])
        assert env_ds.meta["config_digest"] == manifest["config_digest"]
    # a second run trips over the existing files
    assert main(["generate", "spurious", "--out", str(out), "--seed", "0",
                 "--n-nodes", "50", "--d1", "3", "--d2", "3",
                 "--num-envs", "4"]) == 2


# ---------------------------------------------------------------------------
# pretrain artifacts

def test_pretrain_writes_artifacts(tmp_path):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    out = tmp_path / "run"
    rc = main(["pretrain", "--config", str(cfg), "--dataset", str(ds),
               "--out", str(out)])
    assert rc == 0

    results = json.loads((out / "results.json").read_text())
    digest = results["config_digest"]
    for side in ("best_id", "best_ood"):
        assert set(results[side]) == {"epoch", "metrics"}
        assert "accuracy" in results[side]["metrics"]["id_test"]

    first_log = (out / "log.jsonl").read_text().splitlines()[0]
    assert json.loads(first_log) == {"config_digest": digest}

    ckpt, encoder = load_checkpoint(out / "checkpoint_best_id.json")
    assert ckpt.config_digest == digest
    assert encoder["hidden_dim"] == 16
    assert all(np.isfinite(arr).all() for arr in ckpt.params.values())


def test_pretrain_byte_deterministic(tmp_path):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    args = ["pretrain", "--config", str(cfg), "--dataset", str(ds)]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("results.json", "log.jsonl", "checkpoint_best_id.json",
                 "checkpoint_best_ood.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False)


def test_grace_variant_digest_matches_explicit_config(tmp_path):
    """The digest covers the post-variant resolved config, so the grace
    alias and the equivalent explicit settings are the same experiment."""
    ds = _gen(tmp_path)
    alias_cfg = _cfg(tmp_path, "alias.json")
    explicit_cfg = _cfg(tmp_path, "explicit.json",
                        train={"gamma": 0.0, "ascent_step_size": 0.0,
                               "ascent_steps": 1})
    assert main(["pretrain", "--config", str(alias_cfg), "--dataset", str(ds),
                 "--variant", "grace", "--out", str(tmp_path / "a")]) == 0
    assert main(["pretrain", "--config", str(explicit_cfg), "--dataset", str(ds),
                 "--out", str(tmp_path / "b")]) == 0
    assert filecmp.cmp(tmp_path / "a" / "results.json",
                       tmp_path / "b" / "results.json", shallow=False)


def test_pretrain_digest_guard(tmp_path, capsys):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    out = tmp_path / "run"
    base = ["pretrain", "--config", str(cfg), "--dataset", str(ds),
            "--out", str(out)]
    assert main(base) == 0
    # same resolved config may overwrite its own artifacts
    assert main(base) == 0
    # a different variant resolves to a different digest and is refused
    assert main([*base, "--variant", "grace"]) == 2
    assert "different config digest" in capsys.readouterr().err
    assert main([*base, "--variant", "grace", "--force"]) == 0


def test_pretrain_seed_override_changes_digest(tmp_path):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    out = tmp_path / "run"
    base = ["pretrain", "--config", str(cfg), "--dataset", str(ds),
            "--out", str(out)]
    assert main(base) == 0
    assert main([*base, "--seed", "5"]) == 2


# ---------------------------------------------------------------------------
# config validation and exit codes

def test_config_file_errors(tmp_path):
    ds = _gen(tmp_path)
    run = ["--dataset", str(ds), "--out", str(tmp_path / "run")]

    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert main(["pretrain", "--config", str(bad_json), *run]) == 2

    unknown = _cfg(tmp_path, "unknown.json", top={"training": {}})
    assert main(["pretrain", "--config", str(unknown), *run]) == 2

    unknown_sub = _cfg(tmp_path, "unknownsub.json", train={"epoch": 3})
    assert main(["pretrain", "--config", str(unknown_sub), *run]) == 2

    bool_int = _cfg(tmp_path, "bool.json", train={"epochs": True})
    assert main(["pretrain", "--config", str(bool_int), *run]) == 2

    missing = tmp_path / "missing.json"
    assert main(["pretrain", "--config", str(missing), *run]) == 2

    bad_variant = _cfg(tmp_path, "badvariant.json", top={"variant": "full"})
    assert main(["pretrain", "--config", str(bad_variant), *run]) == 2


def test_missing_dataset_is_config_error(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["pretrain", "--config", str(cfg),
                 "--out", str(tmp_path / "run")]) == 2
    assert main(["pretrain", "--config", str(cfg), "--dataset",
                 str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "run")]) == 2


def test_config_dataset_field_used(tmp_path):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path, top={"dataset": str(ds)})
    assert main(["pretrain", "--config", str(cfg),
                 "--out", str(tmp_path / "run")]) == 0


def test_load_config_defaults(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("{}")
    cfg = load_config(path)
    assert cfg.variant == "mario"
    assert cfg.encoder == {"kind": "gcn", "num_layers": 2, "hidden_dim": 32}
    assert cfg.train.epochs == 100


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path, capsys):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path, train={"tau": 1e-5, "epochs": 1})
    rc = main(["pretrain", "--config", str(cfg), "--dataset", str(ds),
               "--out", str(tmp_path / "run")])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err


def test_no_arguments_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# ablate

def test_ablate_table(tmp_path, monkeypatch):
    monkeypatch.setenv("SHIFT_GCL_THREADS", "1")
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    out = tmp_path / "table"
    rc = main(["ablate", "--config", str(cfg), "--dataset", str(ds),
               "--seeds", "1,0", "--out", str(out)])
    assert rc == 0

    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("# config_digest=")
    assert lines[1] == "variant,id_test_mean,id_test_std,ood_test_mean,ood_test_std"
    assert [ln.split(",")[0] for ln in lines[2:]] == \
        ["mario", "no_ad", "no_cmi", "grace"]

    doc = json.loads((out / "ablation.json").read_text())
    assert doc["seeds"] == [0, 1]
    assert set(doc["rows"]) == {"mario", "no_ad", "no_cmi", "grace"}
    assert set(doc["cells"]) == {f"{v}/{s}" for v in doc["rows"] for s in (0, 1)}
    for row in doc["rows"].values():
        assert 0.0 <= row["ood_test_mean"] <= 1.0

    # same table digest: rerun allowed; changed config: refused
    assert main(["ablate", "--config", str(cfg), "--dataset", str(ds),
                 "--seeds", "0,1", "--out", str(out)]) == 0
    other = _cfg(tmp_path, "other.json", train={"tau": 0.5})
    assert main(["ablate", "--config", str(other), "--dataset", str(ds),
                 "--seeds", "0,1", "--out", str(out)]) == 2


def test_ablate_seed_validation(tmp_path):
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    out = str(tmp_path / "table")
    assert main(["ablate", "--config", str(cfg), "--dataset", str(ds),
                 "--seeds", "0", "--out", out]) == 2
    assert main(["ablate", "--config", str(cfg), "--dataset", str(ds),
                 "--seeds", "a,b", "--out", out]) == 2


def test_ablate_thread_cap_validated(tmp_path, monkeypatch):
    monkeypatch.setenv("SHIFT_GCL_THREADS", "zero")
    ds = _gen(tmp_path)
    cfg = _cfg(tmp_path)
    assert main(["ablate", "--config", str(cfg), "--dataset", str(ds),
                 "--seeds", "0,1", "--out", str(tmp_path / "t")]) == 2


# ---------------------------------------------------------------------------
# theory-check

def test_theory_check_prints_json(capsys):
    rc = main(["theory-check", "--t", "0.1", "--samples", "100000",
               "--seed", "0"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["risk_c0"] == 0.0
    assert abs(doc["risk_c_inv_t"] - 0.25) < 0.02
    assert doc["n_samples"] == 100000


def test_theory_check_bad_args():
    assert main(["theory-check", "--t", "-1", "--samples", "100000"]) == 2
    assert main(["theory-check", "--samples", "10"]) == 2
