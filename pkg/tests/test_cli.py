import argparse
import json

import pytest

from tcd.cli import build_provider, main, parse_penalty_list, split_provider_spec
from tcd.providers import NGramModel, TableProvider

from provider_double import char_vocabulary


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- penalty list parsing ---


def test_penalty_range_expands_inclusively():
    assert parse_penalty_list("0:1:0.2") == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


def test_penalty_comma_list():
    assert parse_penalty_list("0.5") == [0.5]
    assert parse_penalty_list("0, 0.3, 0.9") == [0.0, 0.3, 0.9]


def test_penalty_list_rejects_garbage():
    for bad in ("0:1:0", "0:1:-0.2", "a:b:c", "1:2", "-0.5", "", "0:1:0.2:9"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_penalty_list(bad)


# --- provider specs ---


def test_split_provider_spec():
    assert split_provider_spec("ngram:corpus.txt") == ("ngram", "corpus.txt")
    assert split_provider_spec("external-tcp:localhost:9000") == (
        "external-tcp",
        "localhost:9000",
    )


def test_split_provider_spec_rejects_unknown_scheme():
    from tcd.cli import UsageError

    for bad in ("http:foo", "ngram", "table:", ":x"):
        with pytest.raises(UsageError):
            split_provider_spec(bad)


def test_build_ngram_provider_from_corpus(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("abab abab\n", encoding="utf-8")
    provider = build_provider(f"ngram:{corpus}", order=2)
    assert isinstance(provider, NGramModel)
    assert provider.name == "ngram2-char"


def test_build_word_ngram_provider(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("the cat sat on the mat\n", encoding="utf-8")
    provider = build_provider(f"ngram:{corpus}", tokenizer="word")
    assert provider.name == "ngram2-word"


def test_build_table_provider(tmp_path):
    table = tmp_path / "t.json"
    table.write_text(
        json.dumps(
            {
                "tokens": ["a", "b", "c"],
                "default": [0.1, 0.2, 0.3],
                "script": {"0": [9.0, 0.0, 0.0], "1,2": [0.0, 9.0, 0.0]},
            }
        ),
        encoding="utf-8",
    )
    provider = build_provider(f"table:{table}")
    assert isinstance(provider, TableProvider)
    assert list(provider.next_logits([0])) == [9.0, 0.0, 0.0]
    assert list(provider.next_logits([0, 1, 2])) == [0.0, 9.0, 0.0]
    assert list(provider.next_logits([2])) == [0.1, 0.2, 0.3]


# --- fixtures for end-to-end runs ---


@pytest.fixture
def abc_table(tmp_path):
    path = tmp_path / "abc.json"
    path.write_text(
        json.dumps(
            {
                "tokens": ["a", "b", "c"],
                "default": [1.0, 2.0, 3.0],
                "script": {"1": [5.0, 0.0, 0.0]},
            }
        ),
        encoding="utf-8",
    )
    return str(path)


def _peak_row(vocab, pairs):
    row = [0.0] * len(vocab)
    for token, value in pairs.items():
        row[vocab.id_of(token)] = value
    return row


@pytest.fixture
def mech_table(tmp_path):
    """Table-provider file mirroring the mechanism rig: 'B' after a clean
    keyword, a space after a noisy one."""
    vocab = char_vocabulary()
    payload = {
        "tokens": list(vocab.tokens),
        "default": _peak_row(vocab, {"\n": 4.0}),
        "script": {
            str(vocab.id_of(":")): _peak_row(vocab, {"B": 8.0}),
            str(vocab.id_of(" ")): _peak_row(vocab, {" ": 8.0, "B": 6.0}),
            f"{vocab.id_of(' ')},{vocab.id_of(' ')}": _peak_row(vocab, {"B": 8.0}),
        },
    }
    path = tmp_path / "mech.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    lines = []
    for i in range(4):
        lines.append(
            json.dumps(
                {
                    "id": f"q{i}",
                    "question": f"Pick the letter b (round {i}).",
                    "options": {"A": "first", "B": "second"},
                    "answer": "B",
                }
            )
        )
    path = tmp_path / "quiz.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


# --- usage errors (exit 1) ---


def test_no_subcommand(capsys):
    code, out, err = run_cli([], capsys)
    assert code == 1
    assert "usage error" in err and "subcommand" in err
    assert out == ""


def test_unknown_flag(capsys):
    code, _, err = run_cli(["decode", "--bogus"], capsys)
    assert code == 1
    assert "usage error" in err


def test_tau_zero_is_a_usage_error(abc_table, capsys):
    code, out, err = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "a", "--tau", "0"],
        capsys,
    )
    assert code == 1
    assert "usage error" in err and "--tau" in err
    assert out == ""


def test_decode_needs_exactly_one_prompt_source(abc_table, capsys):
    base = ["decode", "--provider", f"table:{abc_table}"]
    code, _, err = run_cli(base, capsys)
    assert code == 1 and "--prompt" in err
    code, _, err = run_cli(base + ["--prompt", "a", "--in", "x.txt"], capsys)
    assert code == 1


def test_eval_requires_dataset(abc_table, capsys):
    code, _, err = run_cli(["eval", "--provider", f"table:{abc_table}"], capsys)
    assert code == 1
    assert "--dataset" in err


def test_unknown_condition(abc_table, dataset, capsys):
    code, _, err = run_cli(
        ["eval", "--provider", f"table:{abc_table}", "--dataset", dataset,
         "--condition", "mystery"],
        capsys,
    )
    assert code == 1


def test_sweep_rejects_unconstrained_condition(mech_table, dataset, capsys):
    code, _, err = run_cli(
        ["sweep", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "clean_baseline"],
        capsys,
    )
    assert code == 1
    assert "TCD" in err


def test_bad_penalties_flag(mech_table, dataset, capsys):
    code, _, err = run_cli(
        ["sweep", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--penalties", "1:0:0.2"],
        capsys,
    )
    assert code == 1


def test_unknown_provider_scheme(capsys):
    code, _, err = run_cli(["decode", "--provider", "magic:x", "--prompt", "a"], capsys)
    assert code == 1
    assert "scheme" in err


def test_perturb_unknown_noise_kind(tmp_path, capsys):
    prompt = tmp_path / "p.txt"
    prompt.write_text("Question: x\n\nA. y\n\nAnswer:", encoding="utf-8")
    code, _, err = run_cli(["perturb", "--in", str(prompt), "--noise", "shuffle"], capsys)
    assert code == 1
    assert "noise kind" in err


def test_perturb_pe_fix_needs_letters(tmp_path, capsys):
    prompt = tmp_path / "p.txt"
    prompt.write_text("Answer:", encoding="utf-8")
    code, _, err = run_cli(["perturb", "--in", str(prompt), "--pe-fix"], capsys)
    assert code == 1
    assert "--letters" in err


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    for name in ("decode", "eval", "sweep", "perturb", "report"):
        assert name in out


# --- runtime errors (exit 2) ---


def test_missing_dataset_file(abc_table, capsys):
    code, out, err = run_cli(
        ["eval", "--provider", f"table:{abc_table}", "--dataset", "/nonexistent.jsonl"],
        capsys,
    )
    assert code == 2
    assert err.startswith("error:")
    assert out == ""


def test_missing_corpus_file(capsys):
    code, _, err = run_cli(
        ["decode", "--provider", "ngram:/nonexistent.txt", "--prompt", "a"], capsys
    )
    assert code == 2


def test_allow_token_outside_vocabulary(abc_table, capsys):
    code, _, err = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "a", "--allow", "z"],
        capsys,
    )
    assert code == 2


def test_report_rejects_non_report_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("who,what\nx,y\n", encoding="utf-8")
    code, _, err = run_cli(
        ["report", "--in", str(bad), "--fig", str(tmp_path / "f.svg")], capsys
    )
    assert code == 2
    assert "header" in err


# --- decode ---


def test_decode_emits_json(abc_table, capsys):
    code, out, err = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "b",
         "--allow", "a,b", "--penalty", "0.5", "--steps", "2", "--top", "2"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["steps"] == 2
    assert [entry["id"] for entry in payload["selected"]] == [0, 1]
    # prompt "b" triggers the scripted row (peak on "a"), then the default
    # row's best allowed token is "b"
    assert payload["emitted_text"] == "ab"
    assert {entry["id"] for entry in payload["final_scores"]} == {0, 1}


def test_decode_is_deterministic(abc_table, capsys):
    argv = ["decode", "--provider", f"table:{abc_table}", "--prompt", "ab", "--steps", "3"]
    first = run_cli(argv, capsys)
    second = run_cli(argv, capsys)
    assert first == second
    assert first[0] == 0


def test_decode_allow_ids(abc_table, capsys):
    code, out, _ = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "a",
         "--allow-ids", "2"],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["selected"][0]["token"] == "c"


def test_decode_reads_prompt_file(abc_table, tmp_path, capsys):
    prompt = tmp_path / "prompt.txt"
    prompt.write_text("ab", encoding="utf-8")
    code, out, _ = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--in", str(prompt)], capsys
    )
    assert code == 0
    json.loads(out)


def test_stdout_stays_machine_readable_with_logging(abc_table, capsys, monkeypatch):
    monkeypatch.setenv("TCD_LOG", "DEBUG")
    code, out, _ = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "a"], capsys
    )
    assert code == 0
    json.loads(out)  # nothing but the JSON document on stdout


def test_invalid_log_level_is_tolerated(abc_table, capsys, monkeypatch):
    monkeypatch.setenv("TCD_LOG", "extremely-verbose")
    code, out, _ = run_cli(
        ["decode", "--provider", f"table:{abc_table}", "--prompt", "a"], capsys
    )
    assert code == 0


# --- eval ---


def test_eval_single_condition_to_file(mech_table, dataset, tmp_path, capsys):
    out_path = tmp_path / "r.csv"
    code, out, err = run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "noise_tcd_pe", "--out", str(out_path)],
        capsys,
    )
    assert code == 0
    assert out == ""
    lines = out_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "model,benchmark,condition,penalty,accuracy"
    assert lines[1] == "table,quiz,noise_tcd_pe,hard,100.00"
    assert len(lines) == 2


def test_eval_full_matrix_to_stdout(mech_table, dataset, capsys):
    code, out, err = run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "all", "--baseline-steps", "1"],
        capsys,
    )
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 7
    conditions = [line.split(",")[2] for line in lines[1:]]
    assert conditions == [
        "clean_baseline", "clean_tcd", "noise_only", "noise_pe", "noise_tcd", "noise_tcd_pe",
    ]
    accuracy = {line.split(",")[2]: line.split(",")[4] for line in lines[1:]}
    assert accuracy["clean_baseline"] == "100.00"
    assert accuracy["noise_only"] == "0.00"
    assert accuracy["noise_tcd_pe"] == "100.00"


def test_eval_json_format(mech_table, dataset, tmp_path, capsys):
    out_path = tmp_path / "r.json"
    code, _, _ = run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "clean_tcd", "--format", "json", "--out", str(out_path)],
        capsys,
    )
    assert code == 0
    payload = json.loads(out_path.read_text(encoding="utf-8"))
    assert payload == [
        {
            "model": "table",
            "benchmark": "quiz",
            "condition": "clean_tcd",
            "penalty": "hard",
            "accuracy": "100.00",
        }
    ]


def test_eval_model_and_benchmark_overrides(mech_table, dataset, capsys):
    code, out, _ = run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "clean_tcd", "--model", "scripted", "--benchmark", "smoke"],
        capsys,
    )
    assert code == 0
    assert out.splitlines()[1].startswith("scripted,smoke,")


# --- sweep ---


def test_sweep_writes_grid(mech_table, dataset, tmp_path, capsys):
    out_path = tmp_path / "sweep.csv"
    code, _, _ = run_cli(
        ["sweep", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--penalties", "0:1:0.5", "--out", str(out_path)],
        capsys,
    )
    assert code == 0
    lines = out_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert [line.split(",")[3] for line in lines[1:]] == ["0.0", "0.5", "1.0"]


def test_sweep_named_benchmarks(mech_table, dataset, capsys):
    code, out, _ = run_cli(
        ["sweep", "--provider", f"table:{mech_table}",
         "--dataset", f"alpha={dataset}", "--dataset", f"beta={dataset}",
         "--penalties", "0.5"],
        capsys,
    )
    assert code == 0
    benchmarks = [line.split(",")[1] for line in out.splitlines()[1:]]
    assert benchmarks == ["alpha", "beta"]


# --- perturb ---


@pytest.fixture
def clean_prompt(tmp_path):
    path = tmp_path / "clean.txt"
    path.write_text(
        "Answer the following multiple-choice question.\n"
        "\n"
        "Question: Which animal purrs?\n"
        "A. cat\n"
        "B. dog\n"
        "Answer:",
        encoding="utf-8",
    )
    return str(path)


def test_perturb_trailing_space(clean_prompt, capsys):
    code, out, _ = run_cli(
        ["perturb", "--in", clean_prompt, "--noise", "trailing_space"], capsys
    )
    assert code == 0
    assert out.endswith("Answer: \n")


def test_perturb_option_spacing(clean_prompt, capsys):
    code, out, _ = run_cli(
        ["perturb", "--in", clean_prompt, "--noise", "option_spacing", "--seed", "0"],
        capsys,
    )
    assert code == 0
    assert "A.  cat" in out and "B.  dog" in out
    assert out.endswith("Answer:\n")


def test_perturb_pe_fix_with_letters(clean_prompt, capsys):
    code, out, _ = run_cli(
        ["perturb", "--in", clean_prompt, "--noise", "none",
         "--pe-fix", "--letters", "A,B"],
        capsys,
    )
    assert code == 0
    assert "Respond with exactly one of: A, B.\nAnswer:" in out


def test_perturb_reads_stdin(capsys, monkeypatch):
    import io

    monkeypatch.setattr("sys.stdin", io.StringIO("Q?\nA. x\nAnswer:"))
    code, out, _ = run_cli(["perturb", "--in", "-", "--noise", "trailing_space"], capsys)
    assert code == 0
    assert out.endswith("Answer: \n")


def test_perturb_composes_all_three(clean_prompt, capsys):
    code, out, _ = run_cli(
        ["perturb", "--in", clean_prompt, "--noise", "option_spacing,trailing_space",
         "--pe-fix", "--letters", "A,B"],
        capsys,
    )
    assert code == 0
    assert "Respond with exactly one of: A, B." in out
    assert "A.  cat" in out
    assert out.endswith("Answer: \n")


# --- report ---


def test_report_renders_sweep_figure(mech_table, dataset, tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    run_cli(
        ["sweep", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--penalties", "0:1:0.5", "--out", str(csv_path)],
        capsys,
    )
    fig = tmp_path / "sweep.svg"
    code, out, _ = run_cli(["report", "--in", str(csv_path), "--fig", str(fig)], capsys)
    assert code == 0
    text = fig.read_text(encoding="utf-8")
    assert text.startswith("<svg") and "polyline" in text


def test_report_renders_condition_figure(mech_table, dataset, tmp_path, capsys):
    csv_path = tmp_path / "matrix.csv"
    run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "all", "--out", str(csv_path)],
        capsys,
    )
    fig = tmp_path / "matrix.svg"
    code, _, _ = run_cli(["report", "--in", str(csv_path), "--fig", str(fig)], capsys)
    assert code == 0
    text = fig.read_text(encoding="utf-8")
    assert "clean_baseline" in text and "<rect" in text
    assert "polyline" not in text  # auto-detected as a condition chart


def test_report_title_flag(mech_table, dataset, tmp_path, capsys):
    csv_path = tmp_path / "m.csv"
    run_cli(
        ["eval", "--provider", f"table:{mech_table}", "--dataset", dataset,
         "--condition", "clean_tcd", "--out", str(csv_path)],
        capsys,
    )
    fig = tmp_path / "f.svg"
    code, _, _ = run_cli(
        ["report", "--in", str(csv_path), "--fig", str(fig), "--title", "Smoke run"],
        capsys,
    )
    assert code == 0
    assert "Smoke run" in fig.read_text(encoding="utf-8")


# --- config files ---


def test_config_supplies_defaults(abc_table, tmp_path, capsys):
    ini = tmp_path / "tcd.ini"
    ini.write_text(
        f"[common]\nprovider = table:{abc_table}\n\n[decode]\nprompt = ab\nsteps = 2\n",
        encoding="utf-8",
    )
    code, out, _ = run_cli(["--config", str(ini), "decode"], capsys)
    assert code == 0
    assert json.loads(out)["steps"] == 2


def test_flags_override_config(abc_table, tmp_path, capsys):
    ini = tmp_path / "tcd.ini"
    ini.write_text(
        f"[common]\nprovider = table:{abc_table}\n\n[decode]\nprompt = ab\nsteps = 2\n",
        encoding="utf-8",
    )
    code, out, _ = run_cli(["--config", str(ini), "decode", "--steps", "4"], capsys)
    assert code == 0
    assert json.loads(out)["steps"] == 4


def test_config_unknown_keys_are_ignored(abc_table, tmp_path, capsys):
    ini = tmp_path / "tcd.ini"
    ini.write_text(
        f"[decode]\nprovider = table:{abc_table}\nprompt = a\nturbo = yes\n",
        encoding="utf-8",
    )
    code, out, _ = run_cli(["--config", str(ini), "decode"], capsys)
    assert code == 0
    json.loads(out)


def test_config_bad_value_is_usage_error(abc_table, tmp_path, capsys):
    ini = tmp_path / "tcd.ini"
    ini.write_text(
        f"[decode]\nprovider = table:{abc_table}\nprompt = a\ntau = warm\n",
        encoding="utf-8",
    )
    code, _, err = run_cli(["--config", str(ini), "decode"], capsys)
    assert code == 1
    assert "tau" in err


def test_config_missing_file(capsys):
    code, _, err = run_cli(["--config", "/nonexistent.ini", "decode", "--prompt", "a"], capsys)
    assert code == 1


def test_config_for_sweep_dataset_list(mech_table, dataset, tmp_path, capsys):
    ini = tmp_path / "tcd.ini"
    ini.write_text(
        f"[sweep]\nprovider = table:{mech_table}\ndataset = one={dataset} two={dataset}\n"
        "penalties = 0.5\n",
        encoding="utf-8",
    )
    code, out, _ = run_cli(["--config", str(ini), "sweep"], capsys)
    assert code == 0
    benchmarks = [line.split(",")[1] for line in out.splitlines()[1:]]
    assert benchmarks == ["one", "two"]
