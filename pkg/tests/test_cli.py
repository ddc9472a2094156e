"""End-to-end checks for the command-line driver.

Everything runs in-process through click's test runner.  Exit codes under
test: 0 success, 2 usage error, 3 cap-limited partial output, 4 failed
audit.  Reports carry rationals as "p/q" strings and deterministic work
counters only, so equal configurations must produce byte-identical files.
"""

import json
from fractions import Fraction

import pytest
from click.testing import CliRunner

from kmedian.cli import BENCH_COLUMNS, canonical_json, main
from kmedian.metric import MetricInstance, generate_random_instance, rat
from kmedian.oracle import brute_force_kmedian, brute_force_ufl, cost

from helpers import line_instance


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Instance files shared by the read-only commands."""
    root = tmp_path_factory.mktemp("cli-corpus")
    paths = {}

    def save(name, inst):
        path = root / name
        path.write_text(canonical_json(inst.to_json_dict()), encoding="utf-8")
        paths[name] = str(path)

    save("tiny-a.json", generate_random_instance(1, 4, 3))
    save("tiny-b.json", generate_random_instance(7, 4, 3))
    # clients sitting on facilities: connection cost zero is reachable
    save("zero.json", line_instance([0, 5], [0, 5]))
    # 26 facilities: both exhaustive searches refuse to enumerate
    save("wide.json", generate_random_instance(2, 2, 26))
    return paths


def load_instance_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return MetricInstance.from_json_dict(json.load(fh))


def load_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class TestGen:
    def test_random_writes_instance_and_summary(self, runner, tmp_path):
        out = tmp_path / "r.json"
        res = runner.invoke(main, ["gen", "random", "--n", "4", "--m", "3", "--seed", "3", "-o", str(out)])
        assert res.exit_code == 0
        inst = load_instance_file(out)
        assert (inst.n, inst.m) == (4, 3)
        summary = json.loads(res.output)
        assert summary["kind"] == "random"
        assert (summary["n"], summary["m"]) == (4, 3)

    def test_same_seed_same_bytes(self, runner, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            res = runner.invoke(main, ["gen", "random", "--n", "5", "--m", "4", "--seed", "11", "-o", str(out)])
            assert res.exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_missing_or_zero_counts(self, runner, tmp_path):
        out = str(tmp_path / "x.json")
        res = runner.invoke(main, ["gen", "random", "-o", out])
        assert res.exit_code == 2
        res = runner.invoke(main, ["gen", "random", "--n", "0", "--m", "3", "-o", out])
        assert res.exit_code == 2

    def test_stable_reports_planted_and_beta(self, runner, tmp_path):
        out = tmp_path / "s.json"
        res = runner.invoke(
            main,
            ["gen", "stable", "--k", "2", "--cluster-size", "2", "--separation", "50",
             "--extra-facilities", "1", "--seed", "4", "-o", str(out)],
        )
        assert res.exit_code == 0
        summary = json.loads(res.output)
        assert len(summary["planted"]) == 2
        # dropping to one center must hurt a well-separated instance
        assert rat(summary["beta"]) > 0
        inst = load_instance_file(out)
        assert (inst.n, inst.m) == (4, 3)

    def test_stable_needs_k(self, runner, tmp_path):
        res = runner.invoke(main, ["gen", "stable", "-o", str(tmp_path / "x.json")])
        assert res.exit_code == 2


class TestSolve:
    def test_greedy_report_audits(self, runner, corpus, tmp_path):
        out = tmp_path / "greedy.json"
        res = runner.invoke(main, ["solve", "greedy", "-i", corpus["tiny-a.json"], "--f", "2", "-o", str(out)])
        assert res.exit_code == 0
        report = load_report(out)
        names = [v["name"] for v in report["audits"]]
        assert names == ["cost-recomputation", "payment-identity", "dual-feasibility"]
        assert all(v["pass"] for v in report["audits"])
        inst = load_instance_file(corpus["tiny-a.json"])
        assert rat(report["cost"]) == cost(inst, report["solution"])
        assert set(report["certificate"]["alpha"]) == {"0", "1", "2", "3"}

    def test_log_adaptive_report(self, runner, corpus, tmp_path):
        out = tmp_path / "la.json"
        res = runner.invoke(
            main, ["solve", "log-adaptive", "-i", corpus["tiny-a.json"], "--f", "2", "-o", str(out)]
        )
        assert res.exit_code == 0
        report = load_report(out)
        names = [v["name"] for v in report["audits"]]
        assert "trace-replay" in names and "free-per-phase" in names
        assert all(v["pass"] for v in report["audits"])
        assert all(set(ref) == {"base", "copy"} for ref in report["solution"])

    def test_merge_report(self, runner, corpus, tmp_path):
        out = tmp_path / "merge.json"
        res = runner.invoke(main, ["solve", "merge", "-i", corpus["tiny-a.json"], "--k", "2", "-o", str(out)])
        assert res.exit_code == 0
        report = load_report(out)
        verdicts = {v["name"]: v["pass"] for v in report["audits"]}
        assert verdicts["regular-count"]
        assert report["certificate"]["regular"] == 2

    def test_stable_default_caps_are_partial(self, runner, corpus, tmp_path):
        # the ball-family menu alone exceeds the default budget, so the
        # run keeps its fallback winner and reports a partial search
        out = tmp_path / "stable.json"
        res = runner.invoke(main, ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2", "-o", str(out)])
        assert res.exit_code == 3
        report = load_report(out)
        assert report["certificate"]["partial_search"] is True
        assert len(report["solution"]) == 2
        assert all(v["pass"] for v in report["audits"])

    def test_stable_zero_cost_completes(self, runner, corpus, tmp_path):
        out = tmp_path / "zero.json"
        res = runner.invoke(main, ["solve", "stable", "-i", corpus["zero.json"], "--k", "2", "-o", str(out)])
        assert res.exit_code == 0
        report = load_report(out)
        assert rat(report["cost"]) == 0
        assert report["certificate"]["winner"]["stage"] == "local-search-optimal"

    def test_stable_raised_caps_complete_search(self, runner, corpus, tmp_path):
        out = tmp_path / "full.json"
        res = runner.invoke(
            main,
            ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2", "--epsilon", "1/2",
             "--cap", "ball_families=60000", "--cap", "candidates=1000000",
             "--cap", "cheaprem_calls=100000", "--cap", "r0_subsets=1024",
             "-o", str(out)],
        )
        assert res.exit_code == 0
        report = load_report(out)
        assert report["certificate"]["partial_search"] is False
        inst = load_instance_file(corpus["tiny-a.json"])
        assert rat(report["cost"]) == brute_force_kmedian(inst, 2).value

    def test_main_exact_k(self, runner, corpus, tmp_path):
        out = tmp_path / "main.json"
        res = runner.invoke(main, ["solve", "main", "-i", corpus["tiny-a.json"], "--k", "2", "-o", str(out)])
        assert res.exit_code == 0
        report = load_report(out)
        assert len(report["solution"]) == 2
        verdicts = {v["name"]: v["pass"] for v in report["audits"]}
        assert verdicts["cardinality"] and verdicts["centers-exist"]

    def test_usage_errors(self, runner, corpus, tmp_path):
        res = runner.invoke(main, ["solve", "greedy", "-i", corpus["tiny-a.json"]])
        assert res.exit_code == 2
        res = runner.invoke(main, ["solve", "merge", "-i", corpus["tiny-a.json"]])
        assert res.exit_code == 2
        res = runner.invoke(main, ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "99"])
        assert res.exit_code == 2
        res = runner.invoke(main, ["solve", "greedy", "-i", str(tmp_path / "nope.json"), "--f", "2"])
        assert res.exit_code == 2

    def test_report_byte_identity(self, runner, corpus, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2", "--seed", "9"]
        for out in (a, b):
            runner.invoke(main, args + ["-o", str(out)])
        assert a.read_bytes() == b.read_bytes()

    def test_workers_do_not_change_bytes(self, runner, corpus, tmp_path):
        serial, pooled = tmp_path / "serial.json", tmp_path / "pooled.json"
        base = ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2"]
        runner.invoke(main, base + ["-o", str(serial)])
        runner.invoke(main, base + ["--workers", "3", "-o", str(pooled)])
        assert serial.read_bytes() == pooled.read_bytes()

    def test_candidate_cap_marks_partial(self, runner, corpus, tmp_path):
        out = tmp_path / "cap.json"
        res = runner.invoke(
            main,
            ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2",
             "--cap", "candidates=1", "-o", str(out)],
        )
        assert res.exit_code == 3
        assert load_report(out)["certificate"]["partial_search"] is True

    def test_audit_failure_beats_partial(self, runner, corpus, tmp_path, monkeypatch):
        # a run that is both partial and unsound must report unsound
        import kmedian.cli as cli_mod

        monkeypatch.setattr(
            cli_mod, "audit_report", lambda inst, report: [{"name": "forced", "pass": False, "detail": ""}]
        )
        res = runner.invoke(
            main,
            ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2",
             "--cap", "candidates=1", "-o", str(tmp_path / "x.json")],
        )
        assert res.exit_code == 4


class TestVerify:
    @pytest.fixture()
    def greedy_report(self, runner, corpus, tmp_path):
        out = tmp_path / "greedy.json"
        res = runner.invoke(main, ["solve", "greedy", "-i", corpus["tiny-a.json"], "--f", "2", "-o", str(out)])
        assert res.exit_code == 0
        return out

    def test_fresh_report_passes(self, runner, corpus, greedy_report):
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(greedy_report)])
        assert res.exit_code == 0
        doc = json.loads(res.output)
        assert doc["ok"] is True
        assert all(v["pass"] for v in doc["verdicts"])

    def test_shifted_dual_values_fail_named_audit(self, runner, corpus, greedy_report, tmp_path):
        # moving mass between clients preserves the payment identity but
        # overloads the facility nearest the inflated client
        report = load_report(greedy_report)
        alpha = report["certificate"]["alpha"]
        first, second = sorted(alpha)[:2]
        alpha[first] = str(Fraction(alpha[first]) + 1000)
        alpha[second] = str(Fraction(alpha[second]) - 1000)
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(report), encoding="utf-8")
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(tampered)])
        assert res.exit_code == 4
        doc = json.loads(res.output)
        fails = [v["name"] for v in doc["verdicts"] if not v["pass"]]
        assert fails == ["dual-feasibility"]

    def test_tampered_cost_fails(self, runner, corpus, tmp_path):
        out = tmp_path / "merge.json"
        runner.invoke(main, ["solve", "merge", "-i", corpus["tiny-a.json"], "--k", "2", "-o", str(out)])
        report = load_report(out)
        report["cost"] = "1/1"
        out.write_text(json.dumps(report), encoding="utf-8")
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(out)])
        assert res.exit_code == 4
        doc = json.loads(res.output)
        fails = [v["name"] for v in doc["verdicts"] if not v["pass"]]
        assert "cost-recomputation" in fails

    def test_missing_report_is_usage_error(self, runner, corpus, tmp_path):
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(tmp_path / "nope.json")])
        assert res.exit_code == 2

    def test_malformed_report_is_usage_error(self, runner, corpus, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"config": {"algorithm": "greedy"}}), encoding="utf-8")
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(bad)])
        assert res.exit_code == 2

    def test_unknown_algorithm_is_usage_error(self, runner, corpus, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"config": {"algorithm": "banana"}}), encoding="utf-8")
        res = runner.invoke(main, ["verify", "-i", corpus["tiny-a.json"], "-r", str(bad)])
        assert res.exit_code == 2


class TestCapsPrecedence:
    """Budget sources merge as: flags over file over environment."""

    ENV = {"KMEDIAN_CAP_SAMPLE_SIZE": "7"}

    def solve_caps(self, runner, corpus, tmp_path, extra, env):
        out = tmp_path / "rep.json"
        args = ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2", "-o", str(out)]
        res = runner.invoke(main, args + extra, env=env)
        assert res.exit_code in (0, 3)
        return load_report(out)["config"]["caps"]

    def test_env_var_applies(self, runner, corpus, tmp_path):
        caps = self.solve_caps(runner, corpus, tmp_path, [], self.ENV)
        assert caps["sample_size"] == 7

    def test_file_overrides_env(self, runner, corpus, tmp_path):
        caps_file = tmp_path / "caps.json"
        caps_file.write_text(json.dumps({"sample_size": 99}), encoding="utf-8")
        caps = self.solve_caps(
            runner, corpus, tmp_path, ["--caps-file", str(caps_file)], self.ENV
        )
        assert caps["sample_size"] == 99

    def test_flag_overrides_file_and_env(self, runner, corpus, tmp_path):
        caps_file = tmp_path / "caps.json"
        caps_file.write_text(json.dumps({"sample_size": 99}), encoding="utf-8")
        caps = self.solve_caps(
            runner, corpus, tmp_path,
            ["--caps-file", str(caps_file), "--cap", "sample_size=2"], self.ENV,
        )
        assert caps["sample_size"] == 2

    def test_unknown_names_and_bad_values_rejected(self, runner, corpus, tmp_path):
        base = ["solve", "stable", "-i", corpus["tiny-a.json"], "--k", "2"]
        res = runner.invoke(main, base + ["--cap", "banana=3"])
        assert res.exit_code == 2
        caps_file = tmp_path / "caps.json"
        caps_file.write_text(json.dumps({"banana": 1}), encoding="utf-8")
        res = runner.invoke(main, base + ["--caps-file", str(caps_file)])
        assert res.exit_code == 2
        res = runner.invoke(main, base, env={"KMEDIAN_CAP_SAMPLE_SIZE": "frog"})
        assert res.exit_code == 2


class TestBench:
    def test_csv_grid(self, runner, corpus):
        res = runner.invoke(
            main,
            ["bench", corpus["tiny-a.json"], corpus["tiny-b.json"],
             "-a", "greedy", "-a", "merge", "--f", "2", "--k", "2"],
        )
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()
        assert lines[0] == ",".join(BENCH_COLUMNS)
        rows = [dict(zip(BENCH_COLUMNS, line.split(","))) for line in lines[1:]]
        assert [(r["instance"], r["algorithm"]) for r in rows] == [
            ("tiny-a.json", "greedy"), ("tiny-a.json", "merge"),
            ("tiny-b.json", "greedy"), ("tiny-b.json", "merge"),
        ]
        for row in rows:
            assert Fraction(row["cost"]) >= 0
            assert float(row["wall_ms"]) >= 0
        for row in rows:
            if row["algorithm"] != "merge":
                continue
            inst = load_instance_file(corpus[row["instance"]])
            assert rat(row["opt"]) == brute_force_kmedian(inst, 2).value
            assert rat(row["ratio"]) >= 1
            assert row["centers"] == "2"
            assert row["phases"] != ""

    def test_empty_corpus_header_only(self, runner):
        res = runner.invoke(main, ["bench", "-a", "greedy", "--f", "2"])
        assert res.exit_code == 0
        assert res.output.strip() == ",".join(BENCH_COLUMNS)

    def test_json_rows(self, runner, corpus):
        res = runner.invoke(
            main,
            ["bench", corpus["tiny-a.json"], "-a", "greedy", "-a", "merge",
             "--f", "2", "--k", "2", "--format", "json"],
        )
        assert res.exit_code == 0
        rows = json.loads(res.output)
        assert len(rows) == 2
        assert all(set(row) == set(BENCH_COLUMNS) for row in rows)

    def test_missing_param_rejected(self, runner, corpus):
        res = runner.invoke(main, ["bench", corpus["tiny-a.json"], "-a", "merge"])
        assert res.exit_code == 2


class TestOracle:
    def test_kmedian_value_and_witness(self, runner, corpus):
        res = runner.invoke(main, ["oracle", "-i", corpus["tiny-a.json"], "--k", "2"])
        assert res.exit_code == 0
        doc = json.loads(res.output)
        inst = load_instance_file(corpus["tiny-a.json"])
        expected = brute_force_kmedian(inst, 2)
        assert doc["kind"] == "k-median"
        assert rat(doc["value"]) == expected.value
        assert doc["witness"] == sorted(doc["witness"])
        assert doc["enumerated"] == 3

    def test_ufl_value(self, runner, corpus):
        res = runner.invoke(main, ["oracle", "-i", corpus["tiny-a.json"], "--f", "2"])
        assert res.exit_code == 0
        doc = json.loads(res.output)
        inst = load_instance_file(corpus["tiny-a.json"])
        assert doc["kind"] == "facility-location"
        assert rat(doc["value"]) == brute_force_ufl(inst, Fraction(2)).value

    def test_exactly_one_objective(self, runner, corpus):
        res = runner.invoke(main, ["oracle", "-i", corpus["tiny-a.json"], "--k", "2", "--f", "2"])
        assert res.exit_code == 2
        res = runner.invoke(main, ["oracle", "-i", corpus["tiny-a.json"]])
        assert res.exit_code == 2

    def test_enumeration_cap_is_partial(self, runner, corpus):
        res = runner.invoke(main, ["oracle", "-i", corpus["wide.json"], "--k", "6"])
        assert res.exit_code == 3
        assert "error" in json.loads(res.output)
        res = runner.invoke(main, ["oracle", "-i", corpus["wide.json"], "--f", "2"])
        assert res.exit_code == 3
        assert "error" in json.loads(res.output)
