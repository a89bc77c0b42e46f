import json

import pytest

from dpkg.cli import build_parser, run_command
from dpkg.corpus import read_jsonl

from .stub_llm import StubLLM, answering, reply


def run(*argv):
    return run_command([str(a) for a in argv])


def test_gradcheck(capsys):
    assert run("gradcheck", "--dim", 8) == 0
    out = capsys.readouterr().out
    assert out.startswith("max relative error:")
    assert float(out.split()[3]) < 1e-3


def test_gradcheck_tolerance_failure(capsys):
    assert run("gradcheck", "--dim", 4, "--tol", 1e-30) == 1


def test_usage_errors(tmp_path, capsys):
    assert run("train", "--config", tmp_path / "missing.toml") == 2
    assert run("frobnicate") == 2
    assert run() == 2
    assert run("synth") == 2  # --out is required
    assert run("generate", "--checkpoint", tmp_path / "nope.ckpt", "--in", tmp_path / "x", "--out", "y") == 2
    assert run("train") == 2  # no training file configured


def test_help_lists_commands():
    text = build_parser().format_help()
    for cmd in ("annotate", "synth", "train", "generate", "eval", "llm-qa", "gradcheck", "stats"):
        assert cmd in text


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("synth", "--seed", 1, "--n", 64, "--out", a) == 0
    assert run("synth", "--seed", 1, "--n", 64, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.jsonl.meta.json").read_text())
    assert meta["setting"] == "SF" and meta["config_hash"]


def test_domain_error_exit_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run("stats", bad) == 1
    assert run("synth", "--n", 4, "--out", tmp_path / "s.jsonl", "--split-dir", tmp_path, "--split", 4, 4) == 1


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--seed", 2, "--n", 12, "--out", d / "all.jsonl", "--split-dir", d, "--split", 8, 2) == 0
    cfg = d / "cfg.yaml"
    cfg.write_text("model:\n  d_model: 16\n  n_heads: 2\n  d_ff: 32\n  n_enc_layers: 1\n  n_dec_layers: 1\n"
                   "  max_len: 256\ngeneration:\n  strategy: greedy\n  max_len: 8\n")
    assert run("train", "--config", cfg, "--train", d / "train.jsonl", "--dev", d / "dev.jsonl",
               "--out-dir", d / "run", "--epochs", 2, "--batch-size", 4, "--seed", 3) == 0
    return d


def test_train_outputs(pipeline):
    run_dir = pipeline / "run"
    log = [json.loads(x) for x in (run_dir / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["model"]["d_model"] == 16 and cfg["train"]["epochs"] == 2 and cfg["config_hash"]


def test_generate_and_eval(pipeline, capsys):
    d = pipeline
    for src in ("generated", "gold"):
        assert run("generate", "--checkpoint", d / "run" / "model.ckpt", "--in", d / "test.jsonl",
                   "--out", d / f"gen_{src}.jsonl", "--keywords", src) == 0
        recs = [json.loads(x) for x in (d / f"gen_{src}.jsonl").read_text().splitlines()]
        assert len(recs) == 2 and all(r["keywords_source"] == src and r["mode"] == "hard" for r in recs)
        assert all(r["setting"] == "SF" and r["config_hash"] for r in recs)
    capsys.readouterr()
    assert run("eval", "--pred", d / "gen_gold.jsonl", "--ref", d / "test.jsonl", "--out", d / "rep.json",
               "--per-sample", d / "per.jsonl") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep == json.loads((d / "rep.json").read_text())
    assert {"bleu4", "rouge_l", "meteor", "token_f1", "em", "qa_f1", "n", "mode", "setting", "config_hash"} <= set(rep)
    assert rep["n"] == 2 and all(0 <= rep[k] <= 100 for k in ("bleu4", "rouge_l", "meteor", "token_f1"))
    assert len((d / "per.jsonl").read_text().splitlines()) == 2


def test_generate_is_reproducible(pipeline):
    d = pipeline
    for name in ("r1", "r2"):
        assert run("generate", "--checkpoint", d / "run" / "model.ckpt", "--in", d / "test.jsonl",
                   "--out", d / f"{name}.jsonl", "--strategy", "beam", "--beam-width", 2) == 0
    assert (d / "r1.jsonl").read_bytes() == (d / "r2.jsonl").read_bytes()


def test_eval_unknown_ids(pipeline, tmp_path):
    (tmp_path / "p.jsonl").write_text(json.dumps({"id": "nope", "question": "q"}) + "\n")
    assert run("eval", "--pred", tmp_path / "p.jsonl", "--ref", pipeline / "test.jsonl") == 1


def test_annotate_hotpot_and_stats(hotpot_path, tmp_path, capsys):
    out = tmp_path / "ann.jsonl"
    assert run("annotate", "--in", hotpot_path, "--format", "hotpot", "--setting", "Full", "--out", out) == 0
    samples = read_jsonl(out)
    assert len(samples) == 3 and all(s.keywords is not None and s.setting == "Full" for s in samples)
    capsys.readouterr()
    assert run("stats", f"hotpot={out}", "--format", "table") == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[:2] == ["split", "n"] and table[1].split()[:2] == ["hotpot", "3"]
    assert run("stats", out, "--out", tmp_path / "st.json") == 0
    st = json.loads((tmp_path / "st.json").read_text())
    assert set(st["ann"]) == {"n", "question", "document"}


def test_annotate_split(tmp_path):
    assert run("synth", "--n", 20, "--out", tmp_path / "c.jsonl") == 0
    assert run("annotate", "--in", tmp_path / "c.jsonl", "--out", tmp_path / "a.jsonl",
               "--split", 0.5, 0.25, 0.25, "--version", "v2") == 0
    sizes = [len(read_jsonl(tmp_path / f"a.{n}.jsonl")) for n in ("train", "dev", "test")]
    assert sum(sizes) == 20


def test_llm_qa_verify(tmp_path, monkeypatch, capsys):
    assert run("synth", "--n", 6, "--out", tmp_path / "c.jsonl") == 0
    samples = read_jsonl(tmp_path / "c.jsonl")
    table = {s.question: s.answer for s in samples[:3]}
    monkeypatch.delenv("LLM_ENDPOINT", raising=False)
    assert run("llm-qa", "--in", tmp_path / "c.jsonl", "--out", tmp_path / "o.jsonl") == 2
    with StubLLM(answering(table)) as stub:
        monkeypatch.setenv("LLM_ENDPOINT", stub.url)
        capsys.readouterr()
        assert run("llm-qa", "--in", tmp_path / "c.jsonl", "--out", tmp_path / "o.jsonl",
                   "--max-in-flight", 3) == 0
    rows = [json.loads(x) for x in (tmp_path / "o.jsonl").read_text().splitlines()]
    assert [r["id"] for r in rows] == sorted(s.id for s in samples)
    scores = {r["id"]: (r["em"], r["f1"]) for r in rows}
    for s in samples:
        assert scores[s.id] == ((1.0, 1.0) if s.question in table else (0.0, 0.0))
    assert json.loads(capsys.readouterr().out)["em"] == pytest.approx(50.0)


def test_llm_qa_generate(tmp_path):
    assert run("synth", "--n", 3, "--out", tmp_path / "c.jsonl") == 0
    with StubLLM(lambda b: reply("Who is it?")) as stub:
        assert run("llm-qa", "--task", "generate", "--guidance", "dual_keywords", "--endpoint", stub.url,
                   "--in", tmp_path / "c.jsonl", "--out", tmp_path / "g.jsonl") == 0
    rows = [json.loads(x) for x in (tmp_path / "g.jsonl").read_text().splitlines()]
    assert len(rows) == 3 and all(r["question"] == "Who is it?" and r["prompt_hash"] for r in rows)
    assert all("Question keywords:" in b["messages"][-1]["content"] for b in stub.requests)


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "dpkg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gradcheck" in r.stdout
