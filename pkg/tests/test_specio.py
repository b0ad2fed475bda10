import json

import pytest

from conftest import spec_text
from lorentztube.specio import (
    Budgets,
    ExperimentSpec,
    SpecError,
    emit_plot_data,
    emit_spec,
    parse_spec,
    run,
)

MINIMAL = """
{
  "template": {"vertices": [[0,0],[1,0],[1,1],[0,1]], "gate1": [3], "gate2": [1]},
  "library": [{"name": "empty"}],
  "process": {"variant": "iid", "probs": [1.0]},
  "seed": 1,
  "experiment": {"kind": "recurrence"}
}
"""


class TestParse:
    def test_minimal_spec_parses(self):
        spec = parse_spec(MINIMAL)
        assert spec.kind == "recurrence"
        assert spec.master_seed == 1
        assert spec.budgets == Budgets()

    def test_unknown_field_rejected(self):
        bad = MINIMAL.replace('"seed": 1,', '"seed": 1, "extra": 2,')
        with pytest.raises(SpecError, match="extra"):
            parse_spec(bad)

    def test_unknown_nested_field_rejected(self):
        bad = MINIMAL.replace('"variant": "iid"', '"variant": "iid", "smoothing": 1')
        with pytest.raises(SpecError, match="smoothing"):
            parse_spec(bad)

    def test_gate_index_out_of_range_names_field(self):
        bad = MINIMAL.replace('"gate2": [1]', '"gate2": [9]')
        with pytest.raises(SpecError, match="template.gate2"):
            parse_spec(bad)

    def test_bad_probs_rejected(self):
        bad = MINIMAL.replace('"probs": [1.0]', '"probs": [0.7]')
        with pytest.raises(SpecError):
            parse_spec(bad)

    def test_markov_spec(self):
        text = MINIMAL.replace(
            '"library": [{"name": "empty"}]',
            '"library": [{"name": "a"}, {"name": "b", "discs": [[0.5, 0.5, 0.2]]}]'
        ).replace(
            '{"variant": "iid", "probs": [1.0]}',
            '{"variant": "markov", "transition": [[0.9, 0.1], [0.2, 0.8]]}')
        spec = parse_spec(text)
        assert spec.process.variant == "markov"
        assert spec.process.stationary is not None

    def test_round_trip_value_equality(self):
        spec = parse_spec(MINIMAL)
        assert parse_spec(emit_spec(spec)) == spec

    def test_canonical_form_is_stable(self):
        once = emit_spec(parse_spec(MINIMAL))
        assert emit_spec(parse_spec(once)) == once

    @pytest.mark.parametrize("name", ["empty_channel", "periodic_disc",
                                      "quenched_two_disc"])
    def test_shipped_specs_are_canonical(self, name):
        text = spec_text(name)
        assert emit_spec(parse_spec(text)) == text


class TestRun:
    @pytest.fixture()
    def tiny_spec(self):
        spec = parse_spec(spec_text("empty_channel"))
        from dataclasses import replace
        return replace(spec, budgets=Budgets(orbits=40, horizon=200,
                                             samples=100, attempts=100, cap=10_000))

    def test_recurrence_run_writes_tables(self, tiny_spec, tmp_path):
        assert run(tiny_spec, tmp_path) == 0
        for name in ("orbit_summary.tsv", "summary.tsv", "birkhoff.tsv",
                     "qn.tsv", "return_hist.tsv", "manifest.json"):
            assert (tmp_path / name).exists()
        lines = (tmp_path / "orbit_summary.tsv").read_text().splitlines()
        assert len(lines) == 41

    def test_curve_row_counts_match_grids(self, tiny_spec, tmp_path):
        run(tiny_spec, tmp_path)
        birkhoff = (tmp_path / "birkhoff.tsv").read_text().splitlines()
        qn = (tmp_path / "qn.tsv").read_text().splitlines()
        assert len(birkhoff) - 1 == 3          # 10, 100, 200
        assert len(qn) - 1 == 3 * len(tiny_spec.rhos)

    def test_channel_birkhoff_is_exactly_one(self, tiny_spec, tmp_path):
        run(tiny_spec, tmp_path)
        rows = (tmp_path / "birkhoff.tsv").read_text().splitlines()[1:]
        assert all(row.split("\t")[1] == "1.0" for row in rows)

    def test_rerun_is_byte_identical_except_manifest(self, tiny_spec, tmp_path):
        run(tiny_spec, tmp_path / "a", workers=1)
        run(tiny_spec, tmp_path / "b", workers=3)
        for name in ("orbit_summary.tsv", "summary.tsv", "birkhoff.tsv",
                     "qn.tsv", "return_hist.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_seed_override_recorded_in_manifest(self, tiny_spec, tmp_path):
        run(tiny_spec, tmp_path, seed=99)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 99
        assert manifest["spec"]["seed"] == 99

    def test_validate_kind(self, tmp_path):
        spec = parse_spec(spec_text("empty_channel"))
        from dataclasses import replace
        spec = replace(spec, kind="validate",
                       budgets=Budgets(samples=100, attempts=100))
        assert run(spec, tmp_path) == 0
        assert (tmp_path / "report.tsv").exists()

    def test_schmidt_kind_writes_qn(self, tmp_path):
        from dataclasses import replace
        spec = parse_spec(spec_text("empty_channel"))
        spec = replace(spec, kind="schmidt",
                       budgets=Budgets(orbits=30, horizon=150))
        assert run(spec, tmp_path) == 0
        qn = (tmp_path / "qn.tsv").read_text().splitlines()
        assert qn[0] == "n\trho\tq_n"
        assert len(qn) - 1 == 3 * len(spec.rhos)
        assert "kappa_hat" in (tmp_path / "summary.tsv").read_text()

    def test_manifest_reproduces_run(self, tiny_spec, tmp_path):
        run(tiny_spec, tmp_path / "orig", workers=2)
        manifest = json.loads((tmp_path / "orig" / "manifest.json").read_text())
        respec = parse_spec(json.dumps(manifest["spec"]))
        run(respec, tmp_path / "redo", seed=manifest["seed"], workers=1)
        for name in ("orbit_summary.tsv", "summary.tsv", "birkhoff.tsv",
                     "qn.tsv", "return_hist.tsv"):
            assert (tmp_path / "orig" / name).read_bytes() == \
                (tmp_path / "redo" / name).read_bytes()
