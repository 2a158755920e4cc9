"""Experiment harness and command-line tests."""

import importlib.resources
import json
import statistics

import pytest

from hybridwms.cli import main
from hybridwms.documents import load_json
from hybridwms.engine import parse_run_config
from hybridwms.errors import SchemaError
from hybridwms.experiments import (
    ComparisonAborted,
    comparison_csv,
    load_workflow_bundle,
    parse_experiment_spec,
    run_cost_study,
    run_policy_comparison,
    summary_csv,
)
from hybridwms.policy import parse_repository
from hybridwms.resources import parse_pool


def data_path(rel):
    return importlib.resources.files("hybridwms") / "data" / rel


def load_defaults():
    bundle = load_workflow_bundle(data_path("workflows/heart-disease.json"))
    pool = parse_pool(load_json(data_path("pool.json")))
    repo = parse_repository(load_json(data_path("policies.json")))
    config = parse_run_config(load_json(data_path("run_config.json")))
    return bundle, pool, repo, config


def comparison_spec(replicates=2):
    document = load_json(data_path("comparison.json"))
    document["replicates"] = replicates
    return parse_experiment_spec(document)


# -- bundles -----------------------------------------------------------------


def test_bundle_loads_sibling_subworkflows():
    bundle = load_workflow_bundle(data_path("workflows/heart-disease.json"))
    assert set(bundle.subworkflows) == {"ecg-analysis", "vhs-simulation"}
    assert bundle.graph.id == "heart-disease"


def test_bundle_missing_subworkflow_file(tmp_path):
    doc = load_json(data_path("workflows/heart-disease.json"))
    (tmp_path / "wf.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError) as err:
        load_workflow_bundle(tmp_path / "wf.json")
    assert "ecg-analysis.json" in str(err.value)


# -- experiment specs ----------------------------------------------------------


def test_parse_experiment_spec_defaults():
    spec = parse_experiment_spec({"kind": "cost_table"})
    assert (spec.replicates, spec.base_seed, spec.horizon) == (1, 0, 24)


def test_parse_experiment_spec_comparison():
    spec = comparison_spec(replicates=20)
    assert spec.kind == "policy_comparison"
    assert spec.replicates == 20
    assert [c.name for c in spec.configs] == ["SET-A", "SET-B", "SET-C"]
    assert spec.configs[1].extra_policies[0].id == "RP-RND"


def test_parse_experiment_spec_rejections():
    with pytest.raises(SchemaError):
        parse_experiment_spec({"kind": "mystery"})
    with pytest.raises(SchemaError):
        parse_experiment_spec({"kind": "cost_table", "extra": 1})
    with pytest.raises(SchemaError):
        parse_experiment_spec({"kind": "cost_table", "replicates": 0})
    with pytest.raises(SchemaError):
        parse_experiment_spec(
            {
                "kind": "policy_comparison",
                "configs": [{"name": "only", "sla": {"user_id": "u", "soft_label": "Balanced"}}],
            }
        )
    with pytest.raises(SchemaError):
        parse_experiment_spec(
            {
                "kind": "policy_comparison",
                "configs": [
                    {"name": "dup", "sla": {"user_id": "u", "soft_label": "Balanced"}},
                    {"name": "dup", "sla": {"user_id": "u", "soft_label": "Low Cost"}},
                ],
            }
        )


# -- cost study ------------------------------------------------------------------


def test_cost_study_levels_order_by_quorum_quality():
    _, pool, _, _ = load_defaults()
    study = run_cost_study(pool)
    means = dict(study.level_means)
    assert means["L1"] < means["L2"] < means["L3"]
    assert study.best_level == "L1"


def test_cost_study_table_keeps_six_columns():
    _, pool, _, _ = load_defaults()
    study = run_cost_study(pool, horizon=3, samples_per_hour=10)
    header = study.table_csv.splitlines()[0].split(",")
    assert header[0] == "hour"
    assert len(header) == 7
    assert len(study.table_csv.splitlines()) == 4
    quorum_lines = study.quorum_csv.splitlines()
    assert quorum_lines[0] == "level,mean_ac"
    assert [ln.split(",")[0] for ln in quorum_lines[1:]] == ["L1", "L2", "L3"]


# -- policy comparison --------------------------------------------------------------


def test_comparison_pairs_replicates_and_sorts_rows():
    bundle, pool, repo, config = load_defaults()
    spec = comparison_spec(replicates=2)
    result = run_policy_comparison(spec, bundle, pool, repo, config)
    assert [(r.config, r.replicate) for r in result.rows] == [
        ("SET-A", 1),
        ("SET-A", 2),
        ("SET-B", 1),
        ("SET-B", 2),
        ("SET-C", 1),
        ("SET-C", 2),
    ]
    by_replicate = {}
    for row in result.rows:
        by_replicate.setdefault(row.replicate, set()).add(row.seed)
    for replicate, seeds in by_replicate.items():
        assert seeds == {spec.base_seed + replicate}
    for row in result.rows:
        assert row.completion == round(row.completion, 6)


def test_comparison_is_deterministic():
    bundle, pool, repo, config = load_defaults()
    spec = comparison_spec(replicates=2)
    first = run_policy_comparison(spec, bundle, pool, repo, config)
    second = run_policy_comparison(spec, bundle, pool, repo, config)
    assert first == second


def test_summary_reconstructs_from_rows():
    bundle, pool, repo, config = load_defaults()
    result = run_policy_comparison(comparison_spec(replicates=3), bundle, pool, repo, config)
    for summary in result.summaries:
        values = [r.completion for r in result.rows if r.config == summary.config]
        assert summary.mean == statistics.fmean(values)
        assert summary.stddev == statistics.pstdev(values)
        assert summary.min == min(values)
        assert summary.max == max(values)


def test_comparison_abort_keeps_partial_rows():
    bundle, pool, repo, config = load_defaults()
    document = load_json(data_path("comparison.json"))
    document["replicates"] = 1
    # second configuration matches no resource policy: L2 with an L1/L3-only repo
    document["configs"] = [
        document["configs"][0],
        {
            "name": "Z-BROKEN",
            "sla": {"user_id": "u", "resource_level": "L2", "performance": "Fast", "service_level": "EcgOnly"},
        },
    ]
    spec = parse_experiment_spec(document)
    repo = [p for p in repo if p.id != "RP-B"]
    with pytest.raises(ComparisonAborted) as err:
        run_policy_comparison(spec, bundle, pool, repo, config)
    partial = err.value.partial
    assert [r.config for r in partial.rows] == ["SET-A"]
    assert partial.error == "Z-BROKEN,1,1001,ERROR"
    text = comparison_csv(partial)
    assert text.splitlines()[-1] == "Z-BROKEN,1,1001,ERROR"
    assert summary_csv(partial).splitlines()[1].startswith("SET-A,")


def test_csv_layouts():
    bundle, pool, repo, config = load_defaults()
    result = run_policy_comparison(comparison_spec(replicates=1), bundle, pool, repo, config)
    rows = comparison_csv(result).splitlines()
    assert rows[0] == "config,replicate,seed,completion_s"
    assert len(rows) == 1 + 3
    for line in rows[1:]:
        assert len(line.split(",")[3].split(".")[1]) == 6
    summary = summary_csv(result).splitlines()
    assert summary[0] == "config,mean,stddev,min,max"
    assert len(summary) == 1 + 3


# -- command line ----------------------------------------------------------------------


def test_cli_run_writes_outputs(tmp_path, capsys):
    code = main(["run", "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "diagnosis=fibrillation" in out
    record = json.loads((tmp_path / "run_record.json").read_text())
    assert record["run_id"] == "run-42"
    timings = (tmp_path / "node_timings.csv").read_bytes()
    assert timings.startswith(b"node,kind,start,end\n")
    assert b"\r" not in timings


def test_cli_run_seed_override(tmp_path, capsys):
    assert main(["run", "--out-dir", str(tmp_path), "--seed", "7"]) == 0
    record = json.loads((tmp_path / "run_record.json").read_text())
    assert record["run_id"] == "run-7"
    assert record["seed"] == 7


def test_cli_run_output_is_byte_stable(tmp_path):
    first = tmp_path / "a"
    second = tmp_path / "b"
    assert main(["run", "--out-dir", str(first)]) == 0
    assert main(["run", "--out-dir", str(second)]) == 0
    assert (first / "run_record.json").read_bytes() == (second / "run_record.json").read_bytes()
    assert (first / "node_timings.csv").read_bytes() == (second / "node_timings.csv").read_bytes()


def test_cli_cost_table(tmp_path, capsys):
    assert main(["experiment", "cost-table", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "lowest-mean level: L1" in out
    table = (tmp_path / "cost_table.csv").read_text()
    assert table.splitlines()[0].count(",") == 6
    assert (tmp_path / "quorum_means.csv").read_text().splitlines()[0] == "level,mean_ac"


def test_cli_policy_comparison(tmp_path, capsys):
    code = main(
        ["experiment", "policy-comparison", "--out-dir", str(tmp_path), "--replicates", "2"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "SET-A: mean=" in out
    rows = (tmp_path / "comparison.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    summary = (tmp_path / "comparison_summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 3


def test_cli_validate_reports_every_document(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    for label in ("workflow", "sla", "pool", "repo", "run-config"):
        assert f"{label}: ok" in out


def test_cli_validate_flags_broken_documents(tmp_path, capsys):
    bad = tmp_path / "pool.json"
    bad.write_text("[{}]")
    assert main(["validate", "--pool", str(bad)]) == 2
    out = capsys.readouterr().out
    assert "pool: error:" in out
    assert out.count(": ok") == 4


def test_cli_missing_document_is_a_clean_error(tmp_path, capsys):
    code = main(["run", "--pool", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)])
    captured = capsys.readouterr()
    assert code == 2
    assert "error:" in captured.err
    assert "nope.json" in captured.err


def test_cli_comparison_abort_exit_code(tmp_path, capsys):
    spec_doc = load_json(data_path("comparison.json"))
    spec_doc["replicates"] = 1
    spec_doc["configs"] = [
        spec_doc["configs"][0],
        {
            "name": "Z-BROKEN",
            "sla": {"user_id": "u", "resource_level": "L2", "performance": "Fast", "service_level": "EcgOnly"},
        },
    ]
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec_doc))
    repo_doc = [p for p in load_json(data_path("policies.json")) if p["id"] != "RP-B"]
    repo_path = tmp_path / "repo.json"
    repo_path.write_text(json.dumps(repo_doc))

    code = main(
        [
            "experiment",
            "policy-comparison",
            "--spec",
            str(spec_path),
            "--repo",
            str(repo_path),
            "--out-dir",
            str(tmp_path),
        ]
    )
    captured = capsys.readouterr()
    assert code == 3
    assert "error:" in captured.err
    rows = (tmp_path / "comparison.csv").read_text().splitlines()
    assert rows[-1].endswith(",ERROR")
    assert rows[1].startswith("SET-A,1,")
