import json

from overlapsim.cli import main


def test_verify_each_workload_exits_zero(capsys):
    base = ["--world-size", "4", "--m", "128", "--n", "128", "--k", "64",
            "--block-m", "32", "--block-n", "32", "--block-k", "32"]
    for wl in ("ag_gemm", "gemm_rs", "gemm_ar", "ag_moe", "mega"):
        assert main(["verify", "--workload", wl] + base) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out


def test_verify_float_mode():
    assert main(["verify", "--workload", "gemm_rs", "--world-size", "4",
                 "--m", "128", "--n", "64", "--k", "32", "--block-m", "32",
                 "--block-n", "32", "--mode", "float"]) == 0


def test_run_writes_trace(tmp_path, capsys):
    out = tmp_path / "trace.json"
    rc = main(["run", "--workload", "ag_gemm", "--world-size", "2", "--m", "128",
               "--n", "64", "--k", "32", "--block-m", "32", "--block-n", "32",
               "--trace-out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "hidden_fraction" in text
    events = json.loads(out.read_text())
    assert events and all(e["ph"] == "X" for e in events)


def test_swizzle_map_world_one_identity(capsys):
    rc = main(["swizzle-map", "--world-size", "1", "--m", "128", "--k", "32",
               "--block-m", "32"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "0 1 2 3"


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("""
# shipped scenario
workload = "gemm_rs"
world_size = 4
m = 128
n = 64
k = 32
block_m = 32
block_n = 32
swizzle = "on"
""")
    assert main(["verify", "--config", str(cfg)]) == 0
    assert "gemm_rs world=4" in capsys.readouterr().out
    # flag wins over the file
    assert main(["verify", "--config", str(cfg), "--workload", "ag_gemm"]) == 0
    assert "ag_gemm world=4" in capsys.readouterr().out


def test_bad_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("wibble = 3\n")
    assert main(["verify", "--config", str(cfg)]) == 2
    assert main(["run", "--workload", "ag_gemm", "--world-size", "3",
                 "--m", "100", "--n", "99", "--k", "32"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_sweep_emits_table(capsys):
    rc = main(["sweep", "--workload", "ag_gemm", "--world-size", "4", "--m", "256",
               "--n", "256", "--k", "64", "--block-m", "32", "--block-n", "32"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split()[:3] == ["workload", "shape", "swizzle"]
    assert len(lines) == 3  # header + on + off


def test_paper_shape_scaled_run(capsys):
    # reduce-scatter reference shape (8192 x 4096 x 11008) shrunk for the desk
    rc = main(["run", "--workload", "gemm_rs", "--world-size", "8", "--m", "8192",
               "--n", "4096", "--k", "11008", "--scale", "16", "--block-m", "64",
               "--block-n", "64"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "M=512" in out and "makespan" in out


def test_exit_code_one_on_mismatch(monkeypatch, capsys):
    import overlapsim.cli as cli

    def broken_compare(outputs, reference, mode):
        return False, 1.0, 1.0

    monkeypatch.setattr(cli, "compare", broken_compare)
    rc = main(["verify", "--workload", "ag_gemm", "--world-size", "2", "--m", "64",
               "--n", "64", "--k", "32", "--block-m", "32", "--block-n", "32"])
    assert rc == 1
    assert "[FAIL]" in capsys.readouterr().out
