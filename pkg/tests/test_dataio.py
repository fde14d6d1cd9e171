import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parkgap.dataio import (
    RESULT_COLUMNS,
    EventRecord,
    ResultRow,
    events_to_timelines,
    load_events,
    read_manifest,
    read_results,
    synth_world,
    timelines_to_events,
    write_events,
    write_manifest,
    write_results,
    write_sim_log,
)
from parkgap.errors import InputError, TraceFormatError
from parkgap.occupancy import FREE, OCCUPIED
from parkgap.simulation import SimConfig, simulate
from parkgap.detectors import RawDetector

MIN = 60.0


def write(tmp_path, text, name="trace.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- loading ---------------------------------------------------------------------


def test_load_well_formed_sorted(tmp_path):
    p = write(tmp_path, "spot_id,timestamp,status\n2,50,1\n1,30,0\n1,10,1\n")
    rep = load_events(p)
    assert [(r.spot_id, r.timestamp) for r in rep.records] == [(1, 10), (1, 30), (2, 50)]
    assert rep.rejected == [] and rep.duplicates == 0


def test_load_rejects_bad_status_with_line(tmp_path):
    p = write(tmp_path, "spot_id,timestamp,status\n1,10,1\n1,20,2\n1,30,0\n")
    rep = load_events(p)
    assert len(rep.records) == 2
    assert len(rep.rejected) == 1
    line, reason = rep.rejected[0]
    assert line == 3
    assert "status" in reason


def test_load_strict_raises_with_line(tmp_path):
    p = write(tmp_path, "spot_id,timestamp,status\n1,abc,1\n")
    with pytest.raises(TraceFormatError, match=":2:"):
        load_events(p, strict=True)


def test_load_duplicates_keep_last(tmp_path):
    p = write(tmp_path, "spot_id,timestamp,status\n1,10,1\n1,10,0\n")
    rep = load_events(p)
    assert rep.duplicates == 1
    assert rep.records == [EventRecord(1, 10, 0)]


def test_load_unknown_column(tmp_path):
    p = write(tmp_path, "spot_id,timestamp,status,colour\n1,10,1,red\n")
    with pytest.raises(TraceFormatError, match="colour"):
        load_events(p)


def test_load_missing_or_empty(tmp_path):
    with pytest.raises(TraceFormatError):
        load_events(tmp_path / "nope.csv")
    with pytest.raises(TraceFormatError):
        load_events(write(tmp_path, ""))


def test_load_tags_and_context(tmp_path):
    # 2024-01-06 is a Saturday; 10:00 UTC
    ts = 1704535200
    p = write(tmp_path, f"spot_id,timestamp,status\n1,{ts},1,weather=rain\n1,{ts + 5},0,bad\n")
    rep = load_events(p)
    assert rep.records[0].tags == (("weather", "rain"),)
    key = rep.records[0].context
    assert key.hour_bucket == 10 and key.day_class == "weekend"
    assert len(rep.rejected) == 1


# -- timelines ----------------------------------------------------------------------


def test_events_to_timelines_one_change():
    b = events_to_timelines([EventRecord(7, 0, FREE), EventRecord(7, 10, OCCUPIED)])
    tl = b.timelines[7]
    assert len(tl.changes) == 1 and tl.horizon == 10
    assert b.merged == 0


def test_events_to_timelines_merge():
    b = events_to_timelines([EventRecord(7, 0, FREE), EventRecord(7, 10, FREE)])
    assert b.timelines[7].changes == ()
    assert b.merged == 1


def test_events_to_timelines_empty():
    b = events_to_timelines([])
    assert b.timelines == {} and b.merged == 0


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1000), st.integers(0, 1)), max_size=60))
def test_round_trip_modulo_merges(raw):
    latest = {(s, t): v for s, t, v in raw}
    recs = sorted((EventRecord(s, t, v) for (s, t), v in latest.items()), key=lambda r: (r.spot_id, r.timestamp))
    b = events_to_timelines(recs)
    back = timelines_to_events(b.timelines)
    assert len(back) == len(recs) - b.merged
    # collapsing consecutive repeats of the input gives the re-serialised records
    kept, last = [], {}
    for r in recs:
        if last.get(r.spot_id) != r.status:
            kept.append((r.spot_id, r.timestamp, r.status))
            last[r.spot_id] = r.status
    first = {}
    for s, t, v in kept:
        first.setdefault(s, t)
    # timelines start at 0, so the first record of each spot moves to 0
    assert [(r.spot_id, r.timestamp if r.timestamp else first[r.spot_id], r.status) for r in back] == kept
    rebuilt = events_to_timelines(back)
    assert rebuilt.merged == 0
    for spot, tl in b.timelines.items():
        assert rebuilt.timelines[spot].changes == tl.changes


def test_file_round_trip(tmp_path):
    recs = [EventRecord(1, 0, 1, (("weather", "sun"),)), EventRecord(1, 60, 0), EventRecord(2, 30, 1)]
    p = tmp_path / "t.csv"
    write_events(recs, p)
    assert load_events(p).records == recs


# -- synthetic worlds ------------------------------------------------------------------


def test_synth_mean_vacancy():
    world = synth_world(100, 60 * MIN, 15 * MIN, 10 * MIN, 1e4 * MIN, seed=1)
    vac = []
    for tl in world.values():
        runs = list(tl.runs(0.0, tl.horizon))
        # drop the censored first and last runs
        vac += [b - a for a, b, s in runs[1:-1] if s == FREE]
    assert len(vac) > 10_000
    assert abs(np.mean(vac) - 10 * MIN) < 0.05 * 10 * MIN


def test_synth_occupied_fraction():
    world = synth_world(100, 60 * MIN, 15 * MIN, 10 * MIN, 1e4 * MIN, seed=2)
    occ = sum(b - a for tl in world.values() for a, b, s in tl.runs(0.0, tl.horizon) if s == OCCUPIED)
    total = sum(tl.horizon for tl in world.values())
    assert abs(occ / total - 60 / 70) < 0.02


def test_synth_short_horizon():
    world = synth_world(50, 60 * MIN, 15 * MIN, 10 * MIN, 0.5, seed=3)
    assert all(len(tl.changes) <= 1 for tl in world.values())


def test_synth_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_events(timelines_to_events(synth_world(10, 3600, 900, 600, 86400, seed=5)), a)
    write_events(timelines_to_events(synth_world(10, 3600, 900, 600, 86400, seed=5)), b)
    assert a.read_bytes() == b.read_bytes()
    write_events(timelines_to_events(synth_world(10, 3600, 900, 600, 86400, seed=6)), b)
    assert a.read_bytes() != b.read_bytes()


def test_synth_rejects_bad_params():
    with pytest.raises(InputError):
        synth_world(10, 0, 1, 1, 10, seed=0)


# -- results ------------------------------------------------------------------------------


def rows(n, seed0=0):
    return [ResultRow("s", "raw", 15.0, seed0 + i, 0.9, 1.0, 0.8, predictions=i, config_digest="abc") for i in range(n)]


def test_results_round_trip(tmp_path):
    p = tmp_path / "r.jsonl"
    write_results(rows(5), p)
    assert read_results(p) == rows(5)


def test_results_append(tmp_path):
    p = tmp_path / "r.jsonl"
    write_results(rows(5), p)
    write_results(rows(5, 5), p)
    assert len(read_results(p)) == 10
    write_results(rows(2), p, append=False)
    assert len(read_results(p)) == 2


def test_results_stable_columns(tmp_path):
    p = tmp_path / "r.jsonl"
    write_results(rows(1), p)
    assert tuple(json.loads(p.read_text().splitlines()[0])) == RESULT_COLUMNS


def test_results_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.jsonl"):
        read_results(tmp_path / "missing.jsonl")


def test_results_reject_bad_rate():
    with pytest.raises(InputError):
        ResultRow("s", "raw", 15.0, 0, 1.5, 1.0, 1.0)


def test_results_bad_line(tmp_path):
    p = tmp_path / "r.jsonl"
    p.write_text('{"scenario": "s"}\n')
    with pytest.raises(InputError, match=":1:"):
        read_results(p)


def test_manifest_round_trip(tmp_path):
    m = {"seeds": [0, 1], "version": "x"}
    write_manifest(tmp_path / "m.json", m)
    assert read_manifest(tmp_path / "m.json") == m
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "none.json")


def test_sim_log_lines(tmp_path):
    cfg = SimConfig.for_rho(0.8, spot_count=10, horizon=7200.0, seed=1)
    _, log = simulate(cfg, RawDetector())
    p = tmp_path / "log.jsonl"
    write_sim_log(log, p)
    lines = p.read_text().splitlines()
    assert len(lines) == len(log)
    first = json.loads(lines[0])
    assert set(first) == set(log[0]._fields)
