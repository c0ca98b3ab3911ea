import pytest

from fpdTool.core.run_store import RunStore


@pytest.fixture
def store(tmp_path):
    with RunStore(f"sqlite:///{(tmp_path / 'store.db').as_posix()}") as s:
        yield s


def test_store_and_fetch(store):
    report = {"certified": True, "d_th_m": 9.38, "loop": {"reason": "ok", "first_violation_m": [12.0, 1.5]},
              "reasons": []}
    run_index = store.store_report("certify", report)
    assert run_index == 1
    fetched = store.get_report(run_index)
    assert fetched["kind"] == "certify"
    assert fetched["data"] == {
        "certified": True,
        "d_th_m": 9.38,
        "loop.reason": "ok",
        "loop.first_violation_m[0]": 12.0,
        "loop.first_violation_m[1]": 1.5,
        "reasons": [],
    }


def test_run_indices_increase(store):
    first = store.store_report("fpd", {"expected_fpd_m": 20.0})
    second = store.store_report("sweep", {"values": [1.0, 2.0]})
    assert second == first + 1
    assert [r["kind"] for r in store.list_runs()] == ["fpd", "sweep"]
    assert store.list_runs()[1]["record_count"] == 2


def test_delete_run(store):
    run_index = store.store_report("validate", {"pass": False, "ks": None})
    assert store.get_report(run_index)["data"]["ks"] is None
    assert store.delete_run(run_index)
    assert store.get_report(run_index) == {}
    assert not store.delete_run(run_index)


def test_default_url_comes_from_properties(isolated_properties):
    with RunStore() as s:
        assert s.url == isolated_properties.get_database_url()
        assert s.url.startswith("sqlite:///")
