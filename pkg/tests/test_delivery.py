import csv
import io
import itertools
import warnings

import pytest
from hypothesis import given, settings, strategies as st

from hiercache import analytics as an
from hiercache.errors import CyclicDependency, DecodeFailure, InconsistentPlacement
from hiercache.model import Demand, NetworkConfig, UserId, cyclic_demand, worst_case_demand
from hiercache.placement import (
    TermKey,
    centralized_fixture,
    decentralized_place,
    fractional_place,
)
from hiercache.delivery import (
    CUT_THROUGH,
    STORE_AND_FORWARD,
    Phase,
    Schedule,
    build_schedule,
    build_schedule_hcc,
    build_schedule_pipeline,
    build_schedule_proposed,
    decode_all,
    export_csv,
    makespan,
    placement_split,
    timeline,
)
from hiercache.delivery.schedule import SERVER, Term


def cfg(n=4, k1=2, k2=2, m1=2.0, m2=1.0, **kw):
    return NetworkConfig(n, k1, k2, m1, m2, **kw)


def frac_schedule(scheme, c):
    a, b = placement_split(scheme, c) if scheme != "proposed" else (c.alpha, c.beta)
    c2 = c.replace(alpha=a, beta=b)
    return build_schedule(scheme, c2, fractional_place(c2), worst_case_demand(c))


def bit_schedule(scheme, c, seed=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b = placement_split(scheme, c) if scheme != "proposed" else (c.alpha, c.beta)
    c2 = c.replace(alpha=a, beta=b)
    p = decentralized_place(c2, seed)
    d = worst_case_demand(c) if c.n_files >= c.n_users else cyclic_demand(c)
    return build_schedule(scheme, c2, p, d), p, d


# ---------------------------------------------------------------- timeline

def dummy(cfg_, mode="fractional"):
    return Schedule(cfg_, mode, "test", 1.0)


def test_independent_links_overlap():
    s = dummy(cfg())
    s.add(SERVER, (), 1.0, Phase.TRANSMISSION_II)
    s.add(1, (), 1.0, Phase.TRANSMISSION_III)
    r = makespan(s)
    assert (r.r1, r.r2, r.makespan) == (1.0, 1.0, 1.0)


def test_cyclic_dependency_detected():
    s = dummy(cfg())
    s.add(SERVER, (), 1.0, Phase.TRANSMISSION_II)
    a = s.add(1, (), 1.0, Phase.TRANSMISSION_III, depends_on=(2,))
    s.add(2, (), 1.0, Phase.TRANSMISSION_III, depends_on=(a.id,))
    with pytest.raises(CyclicDependency):
        makespan(s)


def test_forwarding_semantics():
    s = dummy(cfg())
    src = s.add(SERVER, (), 2.0, Phase.TRANSMISSION_I)
    s.add(1, (), 1.0, Phase.TRANSMISSION_I, depends_on=(src.id,), forwards=src.id)
    s.add(2, (), 2.0, Phase.TRANSMISSION_I, depends_on=(src.id,), forwards=src.id)
    cut = timeline(s, CUT_THROUGH)
    assert cut.start[1] == 1.0 and cut.start[2] == 0.0
    store = timeline(s, STORE_AND_FORWARD)
    assert store.start[1] == 2.0 and store.start[2] == 2.0


def test_barrier_waits_for_completion():
    s = dummy(cfg())
    src = s.add(SERVER, (), 2.0, Phase.BROADCAST)
    sym = s.add(1, (), 2.0, Phase.BROADCAST_FORWARD, depends_on=(src.id,), forwards=src.id)
    sym.after = (src.id,)
    assert timeline(s, CUT_THROUGH).start[1] == 2.0


# ---------------------------------------------------------------- fixtures

def test_sequential_fixture_rows():
    _, p, c = centralized_fixture()
    d = worst_case_demand(c)
    s = build_schedule_hcc("A", c, p, d)
    assert makespan(s).makespan == 3.0
    rows = list(csv.DictReader(io.StringIO(export_csv(s))))
    server = [r for r in rows if r["link"] == "server"]
    assert [r["xor_terms"] for r in server] == ["1:{2}:*;3:{1}:*", "2:{2}:*;4:{1}:*"]
    assert [(r["start"], r["length_bits"]) for r in server] == [("0.0", "1"), ("1.0", "1")]
    # each relay then sends two whole files back to back
    for relay, files in (("relay1", "12"), ("relay2", "34")):
        mine = [r for r in rows if r["link"] == relay]
        assert [r["xor_terms"][0] for r in mine] == list(files)
        assert [r["length_bits"] for r in mine] == ["2", "2"]
        assert [r["start"] for r in mine] == ["2.0", "4.0"]
    assert all(r.exact for r in decode_all(s, p, d).values())


def test_concurrent_fixture_rows_overlap():
    _, p, c = centralized_fixture()
    d = worst_case_demand(c)
    s = build_schedule_proposed(c, p, d, startup_fill=True)
    r = makespan(s)
    assert r.makespan == 2.0
    server = [x for x in s.symbols if x.link == SERVER]
    assert [sorted(t.label(c) for t in x.terms) for x in server] == [
        ["1:{2}:{}", "3:{1}:{}"], ["2:{2}:{}", "4:{1}:{}"]]
    tl = timeline(s)
    for relay, want in ((1, {"1:{1}:{}", "1:{2}:{}", "2:{1}:{}", "2:{2}:{}"}),
                        (2, {"3:{1}:{}", "3:{2}:{}", "4:{1}:{}", "4:{2}:{}"})):
        mine = [x for x in s.symbols if x.link == relay]
        assert {x.terms[0].label(c) for x in mine} == want
        # the relay link never idles: four one-bit rounds fill the two-file delay
        assert sorted(tl.start[x.id] for x in mine) == [0.0, 1.0, 2.0, 3.0]
    assert all(x.exact for x in decode_all(s, p, d).values())


def test_fixture_without_startup_fill_is_slower():
    _, p, c = centralized_fixture()
    s = build_schedule_proposed(c, p, worst_case_demand(c))
    assert makespan(s).makespan == 2.5


# ---------------------------------------------------------------- scheme examples

def test_users_holding_everything_get_empty_schedules():
    # the tycoon phase ignores user caches, so only these schemes go silent
    c = cfg(m1=1, m2=4)
    for scheme in ("proposed", "hcc-b", "pipeline"):
        s = frac_schedule(scheme, c)
        assert s.symbols == []
        assert makespan(s).makespan == 0.0
    s, p, d = bit_schedule("proposed", c.replace(file_bits=64))
    assert s.symbols == []
    assert all(r.exact for r in decode_all(s, p, d).values())


def test_first_transmission_mass():
    c = cfg(m1=2, m2=1)
    r = makespan(frac_schedule("proposed", c))
    want = (2 / 4) * (1 - 2 / 4) * an.rate_r(1 / 4, 2)
    assert r.diagnostics["server:TransmissionI"] == pytest.approx(want, abs=1e-12)


def test_hcc_a_with_relays_holding_library():
    c = cfg(m1=4, m2=1)
    s = frac_schedule("hcc-a", c)
    assert not [x for x in s.symbols if x.link == SERVER]
    assert makespan(s).makespan == pytest.approx(an.rate_r(0.25, 2))


def test_pipeline_beats_hcc_a_with_one_relay():
    c = cfg(6, 1, 3, 0, 2)
    pipe = makespan(frac_schedule("pipeline", c)).makespan
    assert pipe == pytest.approx(an.rate_r(1 / 3, 3))
    assert pipe < makespan(frac_schedule("hcc-a", c)).makespan


@pytest.mark.parametrize("scheme,formula", [
    ("proposed", lambda c: an.propose_delay(c)),
    ("hcc-a", lambda c: an.hcc_a_rates(c).sequential),
    ("hcc-b", lambda c: an.hcc_b_rates(c).sequential),
    ("hcc-c", lambda c: an.hcc_c_delay(c)),
    ("pipeline", an.pipeline_delay),
])
def test_fractional_makespan_matches_formula(scheme, formula):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k1, k2, f1, f2 in itertools.product((1, 2), (1, 2, 3), (0, 0.3, 1), (0, 0.4, 1)):
            c = cfg(6, k1, k2, 6 * f1, 6 * f2)
            assert makespan(frac_schedule(scheme, c)).makespan == pytest.approx(formula(c), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.floats(0, 1), st.floats(0, 1),
       st.floats(0, 1), st.floats(0, 1))
def test_split_proposed_matches_formula(k1, k2, f1, f2, a, b):
    c = cfg(6, k1, k2, 6 * f1, 6 * f2, alpha=a, beta=b)
    r = makespan(frac_schedule("proposed", c))
    assert r.makespan == pytest.approx(an.propose_delay(c), abs=1e-9)
    assert max(r.r1, r.r2) - 1e-9 <= r.makespan <= r.r1 + r.r2 + 1e-9


# ---------------------------------------------------------------- phase accounting

def redundant_mass(s, relay):
    useful = {x.forwards for x in s.symbols if x.link == relay and x.forwards is not None}
    return sum(x.length for x in s.symbols
               if x.link == SERVER and x.phase == Phase.TRANSMISSION_II and x.id not in useful)


@pytest.mark.parametrize("k1,k2,m1,m2", [(2, 2, 2, 1), (3, 2, 1, 2), (2, 3, 4, 0.5), (3, 1, 5, 1)])
def test_phase_masses(k1, k2, m1, m2):
    c = cfg(6, k1, k2, m1, m2)
    s = frac_schedule("proposed", c)
    r = makespan(s)
    p = an.propose_components(c)
    assert r.diagnostics.get("server:TransmissionI", 0.0) == pytest.approx(p.rs1, abs=1e-9)
    assert r.diagnostics.get("server:TransmissionII", 0.0) == pytest.approx(p.rs2, abs=1e-9)
    for relay in range(1, k1 + 1):
        assert redundant_mass(s, relay) == pytest.approx(p.re, abs=1e-9)
    assert r.diagnostics.get("relay_max:TransmissionIII", 0.0) == pytest.approx(
        max(p.rs3 - p.re, 0.0), abs=1e-9)
    assert r.diagnostics["redundant_slot_reuse"] == pytest.approx(min(p.re, p.rs3), abs=1e-9)


@pytest.mark.parametrize("k1,k2,m1,m2", [(2, 2, 2, 1), (3, 2, 1, 2), (2, 1, 3, 3)])
def test_every_needed_class_carried_by_one_phase(k1, k2, m1, m2):
    c = cfg(6, k1, k2, m1, m2)
    s = frac_schedule("proposed", c)
    p = fractional_place(c)
    groups = {Phase.TRANSMISSION_I: "I", Phase.TRANSMISSION_II: "II",
              Phase.TRANSMISSION_II_FILL: "III", Phase.TRANSMISSION_III: "III",
              Phase.STARTUP_FILL: "III"}
    carried = {}
    for x in s.symbols:
        if x.forwards is not None:
            continue
        for t in x.terms:
            k = (t.key.file, t.key.relays, t.key.users)
            entry = carried.setdefault(k, {})
            entry[groups[x.phase]] = entry.get(groups[x.phase], 0.0) + t.length
    want = worst_case_demand(c).by_index(k2)
    for u in range(c.n_users):
        relay = u // k2
        for q in range(1 << k1):
            for sm in range(1 << c.n_users):
                if sm >> u & 1:
                    continue
                mass = p.term_size(TermKey(want[u], 1, q, sm))
                if mass == 0:
                    continue
                phases = carried[(want[u], q, sm)]
                assert len(phases) == 1
                expect = "III" if q >> relay & 1 else ("II" if q == 0 else "I")
                assert phases == pytest.approx({expect: mass})


def test_relay_resident_symbols_have_no_server_deps():
    for c in (cfg(6, 2, 2, 2, 1), cfg(6, 3, 2, 4, 1)):
        s = frac_schedule("proposed", c)
        for x in s.symbols:
            if x.phase in (Phase.TRANSMISSION_II_FILL, Phase.TRANSMISSION_III, Phase.STARTUP_FILL):
                assert x.depends_on == () and x.forwards is None


def test_relay_dependencies_point_at_server():
    for scheme in ("proposed", "hcc-a", "hcc-b", "hcc-c", "pipeline"):
        s = frac_schedule(scheme, cfg(6, 2, 2, 2, 1))
        for x in s.symbols:
            for dep in x.all_deps:
                assert x.link != SERVER and s.symbols[dep].link == SERVER


def test_removing_a_symbol_never_slows_down():
    for s in (frac_schedule("proposed", cfg(6, 2, 2, 1.5, 1)),
              frac_schedule("hcc-c", cfg(6, 2, 2, 2, 2)),
              bit_schedule("proposed", cfg(file_bits=200))[0]):
        base = makespan(s).makespan
        for sym in s.symbols:
            assert makespan(s.without(sym.id)).makespan <= base + 1e-12


# ---------------------------------------------------------------- bit level

@pytest.mark.parametrize("scheme", ["proposed", "hcc-a", "hcc-b", "hcc-c", "pipeline"])
def test_bit_level_decodes(scheme):
    for m1, m2 in ((0, 0), (1, 1), (2, 1), (4, 0), (3, 4)):
        s, p, d = bit_schedule(scheme, cfg(m1=m1, m2=m2, file_bits=2000), seed=m1 + 10 * m2)
        results = decode_all(s, p, d)
        assert all(r.exact and r.missing_bits == 0 for r in results.values())


def test_decodes_with_split_and_repeated_requests():
    c = cfg(6, 2, 2, 2, 2, file_bits=3000, alpha=0.6, beta=0.3)
    s, p, d = bit_schedule("proposed", c, seed=3)
    assert all(r.exact for r in decode_all(s, p, d).values())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = cfg(3, 2, 2, 1, 1, file_bits=1500)
    for scheme in ("proposed", "hcc-a", "pipeline"):
        s, p, d = bit_schedule(scheme, c, seed=1)
        assert not d.is_distinct()
        assert all(r.exact for r in decode_all(s, p, d).values())


def test_three_relays_decode():
    s, p, d = bit_schedule("proposed", cfg(6, 3, 2, 2, 1, file_bits=1500), seed=2)
    assert all(r.exact for r in decode_all(s, p, d).values())


def test_dropped_symbol_is_detected():
    s, p, d = bit_schedule("proposed", cfg(file_bits=1000), seed=1)
    victim = next(x for x in s.symbols if x.phase == Phase.TRANSMISSION_III)
    with pytest.raises(DecodeFailure) as exc:
        decode_all(s.without(victim.id), p, d)
    assert exc.value.node.startswith("user")


def test_relay_cannot_send_what_it_lacks():
    s, p, d = bit_schedule("proposed", cfg(file_bits=500), seed=1)
    x = next(x for x in s.symbols if x.phase == Phase.TRANSMISSION_III and x.link == 1)
    # bits of user 2.1's file held only by relay 2 never reach relay 1
    foreign = Term(TermKey(3, 1, 0b10, 0), 0, 1)
    x.terms = x.terms + (foreign,)
    with pytest.raises(DecodeFailure) as exc:
        decode_all(s, p, d)
    assert exc.value.node.startswith("relay")


def test_bit_level_close_to_fractional():
    c = cfg(file_bits=100_000)
    s, _, _ = bit_schedule("proposed", c, seed=5)
    assert makespan(s).makespan == pytest.approx(an.propose_delay(c), rel=0.03)


def test_errors_for_inconsistent_inputs():
    c = cfg()
    p = fractional_place(c)
    bad = Demand({**worst_case_demand(c).files, UserId(1, 1): 9})
    with pytest.raises(InconsistentPlacement):
        build_schedule_proposed(c, p, bad)
    with pytest.raises(InconsistentPlacement):
        build_schedule_proposed(c.replace(relay_mem=1), p, worst_case_demand(c))
    with pytest.raises(InconsistentPlacement):
        build_schedule_hcc("A", c, fractional_place(c.replace(alpha=0.5)), worst_case_demand(c))
    with pytest.raises(InconsistentPlacement):
        build_schedule_hcc("C", c, p, worst_case_demand(c))
    with pytest.raises(ValueError):
        build_schedule_hcc("D", c, p, worst_case_demand(c))


def test_csv_columns_and_determinism():
    s1 = frac_schedule("proposed", cfg())
    s2 = frac_schedule("proposed", cfg())
    text = export_csv(s1)
    assert text == export_csv(s2)
    header = text.splitlines()[0].split(",")
    assert header == ["symbol_id", "link", "phase", "start", "length_bits", "xor_terms", "depends_on"]


def test_pipeline_bit_level_lag_is_small():
    c = cfg(m1=0, m2=1, file_bits=20_000)
    s, _, _ = bit_schedule("pipeline", c, seed=0)
    r = makespan(s)
    server = r.r1
    assert server <= r.makespan <= server + 256 / c.file_bits + 1e-12
    assert isinstance(build_schedule_pipeline(c, fractional_place(c), worst_case_demand(c)), Schedule)
