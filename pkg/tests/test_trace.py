import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firm.sim import Simulator
from firm.trace import (
    DanglingParent,
    HappensBeforeStats,
    MissingRoot,
    MultipleRoots,
    NegativeDuration,
    Span,
    UnknownSpan,
    WorkflowRelation,
    build_execution_graph,
    classify_children,
    happens_before,
    overlaps,
    read_spans,
    span_from_record,
    span_to_record,
    write_spans,
)


def sp(sid, parent, start, end, svc=None, background=False):
    return Span("t1", sid, parent, svc or sid, f"{svc or sid}-0", "rt", start, end, background)


def hb_with(first, second, parent="root", observed=50, violations=0):
    hb = HappensBeforeStats()
    hb.counts[(first, second, parent, "rt")] = [observed, violations]
    return hb


def test_root_only_graph():
    g = build_execution_graph([sp("root", None, 0, 20)])
    assert g.root == "root"
    assert g.children == {}


def test_children_ordered_by_start_then_id():
    g = build_execution_graph([sp("root", None, 0, 20), sp("B", "root", 0, 15), sp("A", "root", 0, 10)])
    assert g.children["root"] == ("A", "B")


def test_dangling_parent_names_the_span():
    with pytest.raises(DanglingParent) as err:
        build_execution_graph([sp("root", None, 0, 20), sp("A", "ghost", 0, 5)])
    assert err.value.span_id == "A"


def test_root_errors():
    with pytest.raises(MissingRoot):
        build_execution_graph([sp("A", "B", 0, 1), sp("B", "A", 0, 1)])
    with pytest.raises(MultipleRoots):
        build_execution_graph([sp("a", None, 0, 1), sp("b", None, 0, 1)])
    with pytest.raises(NegativeDuration) as err:
        build_execution_graph([sp("root", None, 0, 20), sp("A", "root", 9, 3)])
    assert err.value.span_id == "A"


def test_parallel_overlap():
    g = build_execution_graph([sp("root", None, 0, 20), sp("A", "root", 0, 10), sp("B", "root", 5, 15)])
    rels = classify_children(g, "root", HappensBeforeStats())
    assert [r.kind for r in rels] == [WorkflowRelation.PARALLEL]


def test_sequential_needs_evidence():
    spans = [sp("root", None, 0, 15), sp("A", "root", 0, 5), sp("B", "root", 6, 12)]
    g = build_execution_graph(spans)
    assert classify_children(g, "root", hb_with("A", "B"))[0].kind is WorkflowRelation.SEQUENTIAL
    assert classify_children(g, "root", hb_with("A", "B", observed=5))[0].kind is WorkflowRelation.UNORDERED


def test_background_child():
    g = build_execution_graph([sp("root", None, 0, 20), sp("W", "root", 4, 25, background=True)])
    rels = classify_children(g, "root", HappensBeforeStats())
    assert rels[0].kind is WorkflowRelation.BACKGROUND and rels[0].first == "W"


def test_unknown_parent():
    g = build_execution_graph([sp("root", None, 0, 20)])
    with pytest.raises(UnknownSpan):
        classify_children(g, "nope", HappensBeforeStats())


def test_happens_before_thresholds():
    assert happens_before(hb_with("A", "B", observed=50), "A", "B", "root", "rt")
    assert not happens_before(hb_with("A", "B", observed=50, violations=1), "A", "B", "root", "rt")
    assert not happens_before(hb_with("A", "B", observed=5), "A", "B", "root", "rt")
    assert not happens_before(HappensBeforeStats(), "X", "Y", "root", "rt")


def test_swapped_order_is_never_sequential():
    hb = HappensBeforeStats()
    for k in range(30):
        a, b = ("A", "B") if k % 2 else ("B", "A")
        hb.record(build_execution_graph([sp("root", None, 0, 20), sp(a, "root", 0, 5), sp(b, "root", 6, 12)]))
    assert not happens_before(hb, "A", "B", "root", "rt")
    assert not happens_before(hb, "B", "A", "root", "rt")


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_parallel_is_symmetric(s1, d1, s2, d2):
    a = sp("A", "root", s1, s1 + d1)
    b = sp("B", "root", s2, s2 + d2)
    assert overlaps(a, b) == overlaps(b, a)


@given(st.integers(0, 19), st.integers(0, 3))
def test_insufficient_evidence_never_sequential(observed, violations):
    hb = hb_with("A", "B", observed=observed, violations=min(violations, observed))
    g = build_execution_graph([sp("root", None, 0, 15), sp("A", "root", 0, 5), sp("B", "root", 6, 12)])
    assert classify_children(g, "root", hb)[0].kind is not WorkflowRelation.SEQUENTIAL


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 40), st.integers(0, 40))
def test_each_pair_gets_exactly_one_label(a, b, c, d, e):
    spans = [sp("root", None, 0, 200), sp("A", "root", a, a + b), sp("B", "root", c, c + d), sp("C", "root", e, e + 10)]
    g = build_execution_graph(spans)
    rels = classify_children(g, "root", hb_with("A", "B"))
    pairs = [(r.first, r.second) for r in rels]
    assert len(pairs) == len(set(pairs)) == 3
    assert rels == classify_children(g, "root", hb_with("A", "B"))


def test_jsonl_round_trip_of_simulated_traces(chain6, tmp_path):
    sim = Simulator(chain6, seed=3)
    traces = [tr for _ in range(3) for tr in sim.step().traces]
    path = tmp_path / "spans.jsonl"
    with open(path, "w") as fh:
        for tr in traces:
            write_spans(fh, tr.spans)
    back = read_spans(path)
    assert back == [s for tr in traces for s in tr.spans]
    for tr in traces:
        g = build_execution_graph(tr.spans)
        assert set(g.spans.values()) == set(tr.spans)
        # every non-background child sits inside its parent
        for s in tr.spans:
            if s.parent_span_id and not s.background:
                p = g.spans[s.parent_span_id]
                assert p.start <= s.start and s.end <= p.end


def test_record_fields():
    rec = span_to_record(sp("A", "root", 1, 2))
    assert set(rec) == {"trace_id", "span_id", "parent_span_id", "service_id", "instance_id",
                        "request_type", "start_us", "end_us", "background"}
    assert span_from_record(rec) == sp("A", "root", 1, 2)
    buf = io.StringIO()
    write_spans(buf, [sp("A", "root", 1, 2)])
    assert buf.getvalue().count("\n") == 1
