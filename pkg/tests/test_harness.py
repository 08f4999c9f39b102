import os
import subprocess
import sys
import threading

import numpy as np
import pytest

from splitshield.harness.cli import main
from splitshield.harness.config import SEED_ENV, apply_overrides, from_dict, load_config, parse_value
from splitshield.harness.data import DatasetSpec, gen_dataset, read_csv, write_csv
from splitshield.harness.experiment import (
    REPORT_COLUMNS,
    UTILITY_COLUMNS,
    read_rows,
    report_table,
    run_experiment,
    run_sweep,
)
from splitshield.harness.transport import InProcessTransport, TcpTransport, WireLink, parse_address
from splitshield.errors import ProtocolAbortError
from splitshield.psu import get_group, run_pair, run_psu
from splitshield.psu.wire import Tag

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEMO = os.path.join(ROOT, "configs", "demo.toml")


# ---- config ---------------------------------------------------------------


def test_demo_config_parses():
    cfg = load_config(DEMO, env={})
    assert cfg.dataset.n == 20_000 and cfg.dataset.d_in == 16 and cfg.dataset.pos_fraction == 0.1
    assert cfg.model.d == 8 and cfg.train.batch_size == 1024 and cfg.train.epochs == 3
    assert [a.name for a in cfg.attacks] == ["norm"]
    assert cfg.protection.kind == "none"


def test_bundled_demo_matches_configs_copy():
    import importlib.resources as ir

    bundled = ir.files("splitshield.harness").joinpath("demo.toml").read_text()
    with open(DEMO) as fh:
        assert bundled == fh.read()


def test_overrides_and_types():
    cfg = load_config(DEMO, ["protection.kind=\"marvell\"", "protection.L=0.3", "train.epochs=1"], env={})
    assert cfg.protection.kind == "marvell" and cfg.protection.L == 0.3 and cfg.train.epochs == 1
    assert parse_value("0.5") == 0.5 and parse_value("[1, 2]") == [1, 2] and parse_value("iso") == "iso"


def test_override_needs_equals():
    with pytest.raises(ValueError):
        apply_overrides({}, ["protection.L"])


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"train": {"epoch": 3}})
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"trian": {}})


def test_seed_env_overrides_everything():
    cfg = load_config(DEMO, ["seed=3"], env={SEED_ENV: "11"})
    assert cfg.seed == 11
    assert cfg.dataset.seed == 11 and cfg.train.seed == 11 and cfg.protection.seed == 11


# ---- datasets -------------------------------------------------------------


def test_gen_dataset_deterministic_and_two_class():
    a, _ = gen_dataset(DatasetSpec(n=500, seed=4))
    b, _ = gen_dataset(DatasetSpec(n=500, seed=4))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert set(np.unique(a.y)) == {0, 1}


def test_csv_dump_byte_identical(tmp_path):
    paths = []
    for k in range(2):
        train, _ = gen_dataset(DatasetSpec(n=300, seed=9))
        p = tmp_path / f"d{k}.csv"
        write_csv(train, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = read_csv(paths[0])
    assert np.array_equal(back.X, train.X) and np.array_equal(back.y, train.y)


def test_positive_count_binomial():
    spec = DatasetSpec(n=10_000, pos_fraction=0.1, test_fraction=0.0, seed=1)
    train, _ = gen_dataset(spec)
    assert abs(train.y.sum() - 1000) <= 3 * np.sqrt(10_000 * 0.1 * 0.9)


def test_class_means_separated_along_average_direction():
    train, _ = gen_dataset(DatasetSpec(n=20_000, d_in=4, separation=2.0, seed=2))
    diff = train.X[train.y == 1].mean(0) - train.X[train.y == 0].mean(0)
    assert np.allclose(diff, 2.0 / np.sqrt(4) * np.ones(4), atol=0.1)


def test_too_few_positives_rejected():
    with pytest.raises(ValueError):
        DatasetSpec(n=10, pos_fraction=0.1)


# ---- experiments ----------------------------------------------------------


def _small(*extra):
    return load_config(DEMO, ["dataset.n=4000", "train.epochs=1", *extra], env={})


def test_run_experiment_writes_step_csv(tmp_path):
    res = run_experiment(_small(), str(tmp_path))
    with open(res.steps_path) as fh:
        assert fh.readline().strip() == "step,train_loss,leak_auc_norm,test_loss,test_auc"
    assert set(res.summary) == {*UTILITY_COLUMNS, "leak_auc_norm"}


def test_empty_attack_list_gives_utility_columns_only():
    res = run_experiment(_small("attacks.kinds=[]"))
    assert list(res.summary) == UTILITY_COLUMNS


def test_step_csv_deterministic(tmp_path):
    a = run_experiment(_small("seed=5"), str(tmp_path / "a"))
    b = run_experiment(_small("seed=5"), str(tmp_path / "b"))
    with open(a.steps_path, "rb") as fa, open(b.steps_path, "rb") as fb:
        assert fa.read() == fb.read()


def test_sweep_points_independent_of_order(tmp_path):
    base = {"dataset": {"n": 3000}, "train": {"epochs": 1, "learning_rate": 1.0},
            "protection": {"kind": "iso", "s": 1.0}}
    fwd = from_dict({**base, "sweep": {"param": "protection.s", "values": [0.5, 2.0], "seeds": [0, 1]}})
    rev = from_dict({**base, "sweep": {"param": "protection.s", "values": [2.0, 0.5], "seeds": [1, 0]}})
    run_sweep(fwd, str(tmp_path / "f"))
    run_sweep(rev, str(tmp_path / "r"))
    names = sorted(n for n in os.listdir(tmp_path / "f") if n.startswith("steps_"))
    assert names == sorted(n for n in os.listdir(tmp_path / "r") if n.startswith("steps_"))
    assert len(names) == 4
    for n in names:
        assert (tmp_path / "f" / n).read_bytes() == (tmp_path / "r" / n).read_bytes()


def test_separation_zero_control():
    # No signal in the features: the model falls back to the prior, test AUC
    # is near chance, and the gradient norm alone splits the labels.
    res = run_experiment(load_config(DEMO, ["dataset.separation=0.0"], env={}))
    assert abs(res.summary["test_auc"] - 0.5) < 0.05
    assert res.summary["leak_auc_norm"] > 0.99


@pytest.mark.slow
def test_iso_sweep_monotone_in_noise():
    cfg = load_config(DEMO, env={})
    raw = dict(cfg.raw, protection={"kind": "iso", "s": 1.0},
               sweep={"param": "protection.s", "values": [0.5, 1.0, 2.0], "seeds": [0, 1, 2]})
    table = report_table([{k: str(v) for k, v in r.items()} for r in run_sweep(from_dict(raw))], "norm")
    leaks = [r["leak_auc"] for r in table]
    assert [r["param"] for r in table] == ["0.5", "1.0", "2.0"]
    assert all(a >= b for a, b in zip(leaks, leaks[1:]))


def test_union_run_with_protocol():
    cfg = _small("psu.overlap=0.6", "psu.group=\"toy64\"", "synth.label=\"label-majority\"",
                 "synth.feature=\"fea-sampling\"", "dataset.n=1500")
    res = run_experiment(cfg)
    assert np.isfinite(res.summary["test_auc"])


def test_union_without_strategy_rejected():
    with pytest.raises(ValueError, match="lack labels"):
        run_experiment(_small("psu.overlap=0.5", "psu.run_protocol=false"))


def test_report_table_sorted_numerically():
    rows = [{"param": p, "seed": "0", "leak_auc_norm": str(v), "test_auc": "0.9", "test_loss": "0.2", "ace": "0.01"}
            for p, v in [("0.4", 0.5), ("0.1", 0.9), ("0.2", 0.8), ("0.1", 0.7)]]
    table = report_table(rows)
    assert [r["param"] for r in table] == ["0.1", "0.2", "0.4"]
    assert table[0]["leak_auc"] == pytest.approx(0.8)
    assert list(table[0]) == REPORT_COLUMNS


# ---- transports -----------------------------------------------------------


def test_in_process_fifo():
    a, b = InProcessTransport.pair(timeout=5)
    for k in range(5):
        a.send(Tag.DONE, bytes([k]))
    assert [b.recv()[1] for _ in range(5)] == [bytes([k]) for k in range(5)]


def test_in_process_closed_peer_aborts():
    a, b = InProcessTransport.pair(timeout=5)
    a.close()
    with pytest.raises(ProtocolAbortError):
        b.recv()


def test_in_process_timeout_aborts():
    a, _ = InProcessTransport.pair(timeout=0.05)
    with pytest.raises(ProtocolAbortError):
        a.recv()


def test_wire_link_roundtrip_bit_exact():
    link = WireLink.in_process()
    M = np.random.default_rng(0).standard_normal((7, 3))
    out = link.send_embeddings(M)
    assert out.tobytes() == M.tobytes()
    assert np.array_equal(link.send_gradients(-M), -M)
    assert link.bytes_sent > 2 * M.nbytes


def test_wire_training_matches_direct():
    a = run_experiment(_small("seed=2"))
    b = run_experiment(_small("seed=2", "wire=true"))
    assert a.summary == b.summary


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_address("localhost")


def _tcp_psu(ids_a, ids_p, params, seed):
    out, ready = {}, threading.Event()
    port = {}

    def active():
        def on_ready(p):
            port["p"] = p
            ready.set()

        with TcpTransport.listen("127.0.0.1", 0, timeout=20, ready=on_ready) as t:
            out["a"] = run_psu("active", ids_a, params, t, np.random.default_rng([seed, 0]))

    th = threading.Thread(target=active)
    th.start()
    assert ready.wait(10)
    with TcpTransport.connect("127.0.0.1", port["p"], timeout=20) as t:
        out["p"] = run_psu("passive", ids_p, params, t, np.random.default_rng([seed, 1]))
    th.join(20)
    return out["a"], out["p"]


def test_tcp_and_in_process_psu_agree():
    params = get_group("safe256")
    ids_a = [f"u{i}" for i in range(20)]
    ids_p = [f"u{i}" for i in range(12, 30)]
    ta, tp = _tcp_psu(ids_a, ids_p, params, 7)
    run = run_pair(ids_a, ids_p, params, np.random.default_rng([7, 0]), np.random.default_rng([7, 1]))
    assert ta.uids == tp.uids == run.active.uids == run.passive.uids
    assert ta.mapping == run.active.mapping and tp.mapping == run.passive.mapping
    assert len(ta.uids) == 30


# ---- cli ------------------------------------------------------------------


def test_cli_psu_in_process(capsys):
    code = main(["psu", "--in-process", "--size-a", "64", "--size-b", "64", "--overlap", "0.5",
                 "--group", "safe256", "--seed", "1"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out == ["|U| = 96", "maps consistent: true"]


def test_cli_train_header(tmp_path, capsys):
    code = main(["train", "--config", DEMO, "--out", str(tmp_path), "--dump-grads", str(tmp_path / "g.csv")])
    assert code == 0
    with open(tmp_path / "steps.csv") as fh:
        assert fh.readline().strip() == "step,train_loss,leak_auc_norm,test_loss,test_auc"
    assert (tmp_path / "summary.csv").exists()
    capsys.readouterr()
    assert main(["attack", str(tmp_path / "g.csv"), "--kind", "norm"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("leak_auc_norm = ")
    assert float(line.split("=")[1].split()[0]) > 0.8


def test_cli_gen_data(tmp_path):
    p = tmp_path / "d.csv"
    assert main(["gen-data", "--n", "200", "--out", str(p), "--seed", "3"]) == 0
    assert read_csv(p).X.shape == (180, 16)


def test_cli_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", "--config", DEMO, "--set", "dataset.n=3000", "--set", "train.epochs=1",
                 "--set", "protection.kind=\"iso\"", "--param", "protection.s", "--values", "2.0,0.5",
                 "--seeds", "0", "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "param,leak_auc,test_auc,test_loss,ace"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0.5", "2.0"]
    assert len(read_rows(out / "summary.csv")) == 2


def test_cli_usage_errors_exit_2(capsys):
    for argv in (["bogus"], ["train", "--no-such-flag"], []):
        with pytest.raises(SystemExit) as ei:
            main(argv)
        assert ei.value.code == 2
    capsys.readouterr()


def test_cli_failure_one_line_diagnostic(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "missing.toml")])
    err = capsys.readouterr().err
    assert code == 1
    assert len(err.strip().splitlines()) == 1 and err.startswith("splitshield: ")


def test_cli_bad_overlap(capsys):
    assert main(["psu", "--in-process", "--overlap", "1.5"]) == 1
    assert "overlap" in capsys.readouterr().err


@pytest.mark.slow
def test_cli_tcp_two_processes(tmp_path):
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    common = ["--size-a", "16", "--size-b", "16", "--overlap", "0.5", "--group", "safe256", "--seed", "2"]
    cmd = [sys.executable, "-m", "splitshield.harness.cli", "psu"]
    act = subprocess.Popen(cmd + ["--role", "active", "--listen", f"127.0.0.1:{port}", "--out",
                                  str(tmp_path / "a.csv"), *common], stdout=subprocess.PIPE, text=True)
    pas = subprocess.run(cmd + ["--role", "passive", "--connect", f"127.0.0.1:{port}", "--out",
                                str(tmp_path / "p.csv"), *common], capture_output=True, text=True, timeout=60)
    a_out, _ = act.communicate(timeout=60)
    assert act.returncode == 0 and pas.returncode == 0, pas.stderr
    assert a_out.strip() == pas.stdout.strip() == "|U| = 24"
    a = dict(line.split(",") for line in (tmp_path / "a.csv").read_text().splitlines()[1:])
    p = dict(line.split(",") for line in (tmp_path / "p.csv").read_text().splitlines()[1:])
    shared = set(a) & set(p)
    assert len(shared) == 8 and all(a[i] == p[i] for i in shared)
