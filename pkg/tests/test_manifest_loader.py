"""
清单加载与数据集划分测试
"""
from collections import Counter

import pytest

from shared.data_access.manifest_loader import (
    EXCLUDED_COLUMNS,
    NEGATIVE,
    POSITIVE,
    Condition,
    Manifest,
    SampleRecord,
    Split,
    default_label_rule,
    excluded_records,
    load_manifest,
    save_manifest,
    split_dataset,
)
from shared.utilities.errors import (
    DuplicateSampleIdError,
    InsufficientSamplesError,
    MalformedRowError,
    MissingColumnError,
)


def _record(sample_id: str, condition: Condition, treatment=None, concentration=None) -> SampleRecord:
    return SampleRecord(
        sample_id=sample_id,
        condition=condition,
        treatment=treatment,
        concentration=concentration,
        image_paths=(f"{sample_id}.png",),
    )


def _untreated_manifest(n_pos: int, n_neg: int, merge: bool = True) -> Manifest:
    records = [_record(f"pos{i:03d}", Condition.INFECTED) for i in range(n_pos)]
    records += [_record(f"neg{i:03d}", Condition.MOCK if i % 2 else Condition.UV_INACTIVATED) for i in range(n_neg)]
    return Manifest(records=tuple(records), channel_count=1, label_rule=default_label_rule(merge))


@pytest.mark.unit
class TestLoadManifest:
    """清单解析"""

    def test_labels_with_merged_controls(self, write_manifest):
        path = write_manifest([
            {"sample_id": "a", "condition": "Mock"},
            {"sample_id": "b", "condition": "UVInactivated"},
            {"sample_id": "c", "condition": "Infected"},
        ], images=False)
        manifest = load_manifest(path, merge_controls=True)
        assert [manifest.label_of(r) for r in manifest.records] == [NEGATIVE, NEGATIVE, POSITIVE]
        assert manifest.channel_count == 1

    def test_uv_unlabeled_without_merge(self, write_manifest):
        path = write_manifest([{"sample_id": "b", "condition": "UVInactivated"}], images=False)
        manifest = load_manifest(path, merge_controls=False)
        assert manifest.label_of(manifest.records[0]) is None

    def test_header_only_gives_empty_manifest(self, write_manifest):
        path = write_manifest([], channels=2, images=False)
        manifest = load_manifest(path)
        assert len(manifest) == 0
        assert manifest.channel_count == 2

    def test_duplicate_sample_id(self, write_manifest):
        path = write_manifest([{"sample_id": "x"}, {"sample_id": "x"}], images=False)
        with pytest.raises(DuplicateSampleIdError):
            load_manifest(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("sample_id,plate,channel_1\na,P1,a.png\n", encoding="utf-8")
        with pytest.raises(MissingColumnError):
            load_manifest(path)

    def test_unknown_condition_reports_row(self, write_manifest):
        path = write_manifest([{"sample_id": "a"}, {"sample_id": "b", "condition": "Sick"}], images=False)
        with pytest.raises(MalformedRowError) as info:
            load_manifest(path)
        assert info.value.index == 1

    def test_treated_control_is_rejected(self, write_manifest):
        path = write_manifest([{"sample_id": "a", "condition": "Mock", "treatment": "d1", "concentration": "1"}],
                              images=False)
        with pytest.raises(MalformedRowError):
            load_manifest(path)

    def test_treatment_without_concentration(self, write_manifest):
        path = write_manifest([{"sample_id": "a", "treatment": "d1"}], images=False)
        with pytest.raises(MalformedRowError):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "absent.csv")

    def test_relative_paths_resolve_against_manifest(self, write_manifest):
        path = write_manifest([{"sample_id": "a"}], images=False)
        record = load_manifest(path).records[0]
        assert record.image_paths[0] == str(path.parent / "images" / "a_ch1.png")

    def test_save_then_load_keeps_records(self, write_manifest, tmp_path):
        path = write_manifest([
            {"sample_id": "a", "condition": "Mock", "split": "Train"},
            {"sample_id": "t", "treatment": "drug", "concentration": "2.5", "split": "TreatedTest"},
        ])
        manifest = load_manifest(path)
        copy_path = save_manifest(manifest, path.parent / "copy.csv")
        reloaded = load_manifest(copy_path)
        assert reloaded.records == manifest.records


@pytest.mark.unit
class TestSplitDataset:
    """数据集划分"""

    def test_counts_per_class(self):
        manifest = _untreated_manifest(50, 50)
        splits = split_dataset(manifest, seed=0, fractions=(0.6, 0.2, 0.2))
        per_split = Counter(r.split for r in splits.records)
        assert per_split[Split.TRAIN] == 60
        assert per_split[Split.VALIDATION] == 20
        assert per_split[Split.UNTREATED_TEST] == 20
        for split, expected in ((Split.TRAIN, 30), (Split.VALIDATION, 10), (Split.UNTREATED_TEST, 10)):
            labels = Counter(splits.label_of(r) for r in splits.by_split(split))
            assert labels[POSITIVE] == expected
            assert labels[NEGATIVE] == expected

    def test_deterministic_for_seed(self):
        manifest = _untreated_manifest(20, 20)
        first = split_dataset(manifest, seed=7)
        second = split_dataset(manifest, seed=7)
        assert [(r.sample_id, r.split) for r in first.records] == [(r.sample_id, r.split) for r in second.records]

    def test_seed_changes_assignment(self):
        manifest = _untreated_manifest(20, 20)
        first = {r.sample_id: r.split for r in split_dataset(manifest, seed=1).records}
        second = {r.sample_id: r.split for r in split_dataset(manifest, seed=2).records}
        assert first != second

    def test_balances_majority_class(self):
        manifest = _untreated_manifest(10, 30)
        splits = split_dataset(manifest, seed=0)
        labels = Counter(splits.label_of(r) for r in splits.records)
        assert labels[POSITIVE] == labels[NEGATIVE] == 10

    def test_treated_always_in_treated_test(self):
        records = list(_untreated_manifest(10, 10).records)
        records.append(_record("t1", Condition.INFECTED, treatment="drug", concentration=1.0))
        splits = split_dataset(Manifest(records=tuple(records), channel_count=1), seed=0)
        treated = splits.by_split(Split.TREATED_TEST)
        assert [r.sample_id for r in treated] == ["t1"]
        assert all(not r.is_treated for s in (Split.TRAIN, Split.VALIDATION, Split.UNTREATED_TEST)
                   for r in splits.by_split(s))

    def test_unlabeled_records_excluded(self):
        splits = split_dataset(_untreated_manifest(10, 10, merge=False), seed=0)
        assert all(r.condition != Condition.UV_INACTIVATED for r in splits.records)

    def test_excluded_records_list_dropped_ids(self):
        manifest = _untreated_manifest(10, 10, merge=False)
        splits = split_dataset(manifest, seed=0)
        excluded = excluded_records(manifest, splits)
        assert list(excluded.columns) == EXCLUDED_COLUMNS
        assigned = {r.sample_id for r in splits.records}
        assert assigned.isdisjoint(excluded["sample_id"])
        assert assigned | set(excluded["sample_id"]) == {r.sample_id for r in manifest.records}
        reasons = excluded.groupby("reason")["sample_id"].apply(set).to_dict()
        assert reasons["unlabeled"] == {f"neg{i:03d}" for i in range(0, 10, 2)}
        assert len(reasons["class_balance"]) == 5
        assert all(sid.startswith("pos") for sid in reasons["class_balance"])

    def test_excluded_records_empty_when_balanced(self):
        manifest = _untreated_manifest(10, 10)
        excluded = excluded_records(manifest, split_dataset(manifest, seed=0))
        assert excluded.empty
        assert list(excluded.columns) == EXCLUDED_COLUMNS

    def test_excluded_records_no_nuclei_reason(self):
        manifest = _untreated_manifest(6, 6)
        kept = manifest.with_records([r for r in manifest.records if r.sample_id != "pos000"])
        excluded = excluded_records(manifest, split_dataset(kept, seed=0), no_nuclei=["pos000"])
        assert excluded.set_index("sample_id").loc["pos000", "reason"] == "no_nuclei"
        assert (excluded["reason"] == "class_balance").sum() == 1

    def test_all_treated_is_insufficient(self):
        records = [_record(f"t{i}", Condition.INFECTED, treatment="drug", concentration=1.0) for i in range(5)]
        with pytest.raises(InsufficientSamplesError):
            split_dataset(Manifest(records=tuple(records), channel_count=1), seed=0)

    def test_rejects_bad_fractions(self):
        with pytest.raises(ValueError):
            split_dataset(_untreated_manifest(4, 4), seed=0, fractions=(0.5, 0.5))
