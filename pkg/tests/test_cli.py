import textwrap

import pytest

from hybridslice import runner
from hybridslice.cli import EXIT_CONFIG, EXIT_INVARIANT, main
from hybridslice.config import load_config
from hybridslice.env import InvariantError, SlicingEnv
from hybridslice.runner import RUNLOG_SCHEMA, RunLog, compare

TINY = """\
profile: desk
seeds: [0, 1]
scenario:
  epoch_ttis: 20
  episode_epochs: 4
train:
  episodes: 2
  batch_size: 4
op:
  grid_step: 10
  seeds: [0]
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def body(path):
    return RunLog.read(path).body()


def test_train_writes_runlog_summary_and_checkpoints(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(tiny), "--out", str(out)]) == 0
    log = RunLog.read(out / "runlog_proposed.csv")
    assert log.header["schema"] == RUNLOG_SCHEMA
    assert log.header["config_hash"] == load_config(tiny).config_hash
    assert len(log.rows) == 2 * 2 * 4
    keys = [(r["seed"], r["episode"], r["epoch"]) for r in log.rows]
    assert keys == sorted(keys)
    assert (out / "checkpoint_proposed_seed0.npz").exists()
    assert "mean converged reward" in (out / "summary_proposed.txt").read_text()
    assert "mean converged reward" in capsys.readouterr().out
    # defaults of the training schedule are echoed into the header
    assert log.header["config"]["train"]["eps_decay_fraction"] == 0.6


@pytest.mark.parametrize("argv", [
    ["train"],
    ["train", "--algorithm", "hard-dqn"],
    ["train", "--algorithm", "nvs"],
    ["oracle"],
])
def test_subcommands_are_deterministic(tiny, tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--config", str(tiny), "--out", str(a), "--seed", "3"]) == 0
    assert main(argv + ["--config", str(tiny), "--out", str(b), "--seed", "3"]) == 0
    files = sorted(p.name for p in a.glob("runlog_*.csv"))
    assert files
    for name in files:
        assert body(a / name) == body(b / name)


def test_nvs_allocation_constant(tiny, tmp_path):
    assert main(["train", "--config", str(tiny), "--algorithm", "nvs", "--out", str(tmp_path)]) == 0
    log = RunLog.read(tmp_path / "runlog_nvs.csv")
    assert len({(r["w_embb"], r["w_urllc"], r["common"]) for r in log.rows}) == 1
    assert all(r["common"] == 0 for r in log.rows)


def test_oracle_writes_candidate_audit(tmp_path):
    cfg = tmp_path / "op.yaml"
    cfg.write_text(TINY.replace("grid_step: 10", "grid_step: 20"))
    out = tmp_path / "op"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == 0
    audit = (out / "op_candidates.csv").read_text().splitlines()
    # grid step 20 on W = 20 leaves 3 candidates: all-common, all to eMBB, all to uRLLC
    assert audit[0] == "candidate,dedicated,common,seed,utility,reward"
    assert len(audit) == 1 + 3
    assert (out / "runlog_op.csv").exists()


def test_eval_from_checkpoint(tiny, tmp_path):
    out = tmp_path / "o"
    assert main(["train", "--config", str(tiny), "--out", str(out), "--seed", "0"]) == 0
    ck = out / "checkpoint_proposed_seed0.npz"
    assert main(["eval", "--config", str(tiny), "--out", str(out), "--seed", "0", "--checkpoint", str(ck)]) == 0
    log = RunLog.read(out / "runlog_eval_proposed.csv")
    assert len(log.rows) == 4
    assert all(r["epsilon"] == 0 for r in log.rows)


def test_compare_and_sweep(tiny, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", "--config", str(tiny), "--out", str(out), "--seed", "0",
                 "--algorithm", "proposed", "--algorithm", "nvs"]) == 0
    assert (out / "compare.csv").exists()
    capsys.readouterr()
    a = out / "runlog_proposed.csv"
    assert main(["compare", str(a), str(out / "runlog_nvs.csv"), "--out", str(tmp_path / "c.csv")]) == 0
    assert "delta" in capsys.readouterr().out


def test_compare_reflexive_and_hash_guard(tiny, tmp_path):
    exp = load_config(tiny, overrides={"seeds": [0]})
    log = runner.run(exp, write=False).runlog
    _, report = compare({"a": log, "b": log})
    assert report["deltas"] == {"b": 0.0}
    other = RunLog(dict(log.header, scenario_hash="ffff"), log.columns, log.rows)
    with pytest.raises(ValueError, match="scenario hash"):
        compare({"a": log, "b": other})
    old = RunLog(dict(log.header, schema=RUNLOG_SCHEMA + 1), log.columns, log.rows)
    with pytest.raises(ValueError, match="schema"):
        compare({"a": log, "b": old})


def test_compare_cli_rejects_mismatch(tiny, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["train", "--config", str(tiny), "--out", str(a), "--seed", "0", "--algorithm", "nvs"])
    other = tmp_path / "other.yaml"
    other.write_text(TINY.replace("epoch_ttis: 20", "epoch_ttis: 21"))
    main(["train", "--config", str(other), "--out", str(b), "--seed", "0", "--algorithm", "nvs"])
    rc = main(["compare", str(a / "runlog_nvs.csv"), str(b / "runlog_nvs.csv")])
    assert rc == EXIT_CONFIG
    assert "scenario hash mismatch" in capsys.readouterr().err


def test_runlog_read_rejects_unknown_schema(tmp_path, tiny):
    exp = load_config(tiny, overrides={"seeds": [0]})
    log = runner.run(exp, algorithm="nvs", write=False).runlog
    p = log.write(tmp_path / "x.csv")
    p.write_text(p.read_text().replace(f"# schema: {RUNLOG_SCHEMA}", "# schema: 99"))
    with pytest.raises(ValueError):
        RunLog.read(p)


def test_output_dir_env_override(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv(runner.OUTPUT_ENV_VAR, str(tmp_path / "envout"))
    assert main(["train", "--config", str(tiny), "--algorithm", "nvs", "--seed", "0"]) == 0
    assert (tmp_path / "envout" / "runlog_nvs.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(textwrap.dedent("""\
        scenario:
          initial_dedicated: [1, 1]
        """))
    assert main(["train", "--config", str(p)]) == EXIT_CONFIG
    assert "RB budget" in capsys.readouterr().err


def test_invariant_breach_exits_nonzero(tiny, tmp_path, monkeypatch, capsys):
    def broken(self, *a, **k):
        raise InvariantError("TTI 0: 21 RBs granted > W=20")

    monkeypatch.setattr(SlicingEnv, "_check_tti", broken)
    rc = main(["train", "--config", str(tiny), "--algorithm", "nvs", "--out", str(tmp_path)])
    assert rc == EXIT_INVARIANT
    assert "invariant breach" in capsys.readouterr().err


def test_summary_fields(tiny):
    exp = load_config(tiny, overrides={"seeds": [0]})
    res = runner.run(exp, algorithm="nvs", write=False)
    s = res.summary
    assert set(s) == {"converged_reward", "sla_fraction", "final_isolation", "mean_converged_reward"}
    assert set(s["sla_fraction"][0]) == {"embb", "urllc"}


def test_hard_dqn_env_has_no_common_pool(tiny):
    exp = load_config(tiny)
    env = runner.algorithm_env(exp, "hard-dqn")
    assert env.hybrid is False and env.initial_common == 0
    assert env.initial_allocation().common == 0
