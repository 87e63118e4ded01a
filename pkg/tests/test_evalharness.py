import hashlib
import itertools
import json
import math
import random
import re
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TABLE5_QUERY
from telebridge.backends import STOPWORDS
from telebridge.core import UserQuery, ValidationError
from telebridge.evalharness import (
    NO_DATA,
    Scenario,
    TemplateSet,
    aggregate,
    generate_scenarios,
    hallucination_rate,
    intent_frequencies,
    load_scenarios,
    pii_metrics,
    preservation_score,
    run_suite,
    save_scenarios,
    spans_match,
    token_retention,
    translation_metrics,
)
from telebridge.privacy import anonymize, detect_entities
from telebridge.translation import Constraint, TechnicalQuery, translate

# --------------------------------------------------------------------------- independent oracles

_TOK = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*")


def _tokens(text):
    return [t for t in _TOK.findall(text.lower()) if t not in STOPWORDS]


def _hash_vec(text, dim=1024):
    v = [0.0] * dim
    for t in _tokens(text):
        h = int.from_bytes(hashlib.blake2b(t.encode("utf-8"), digest_size=8).digest(), "little")
        v[h % dim] += 1.0
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v] if n else v


def _oracle_preservation(a, b):
    va, vb = _hash_vec(a), _hash_vec(b)
    return 100.0 * max(0.0, min(1.0, sum(x * y for x, y in zip(va, vb))))


def _oracle_retention(q, q_prime, entities):
    # blank every entity span, keep whitespace tokens untouched by the blanking
    marked = list(q)
    for e in entities:
        for i in range(e["start"], e["end"]):
            marked[i] = "\0" if not q[i].isspace() else q[i]
    keep = [tok for tok, m in zip(q.split(), "".join(marked).split()) if "\0" not in m]
    if not keep:
        return 1.0
    left = Counter(keep) - Counter(q_prime.split())
    return (len(keep) - sum(left.values())) / len(keep)


def _oracle_match(a, b):
    if a[2] != b[2]:
        return False
    inter = len(set(range(a[0], a[1])) & set(range(b[0], b[1])))
    return inter > 0 and 2 * inter >= max(a[1] - a[0], b[1] - b[0])


def _oracle_pii(det, gold):
    if not det and not gold:
        return 1.0, 1.0
    grid = {(i, j): _oracle_match(d, g) for (i, d), (j, g) in itertools.product(enumerate(det), enumerate(gold))}
    r = sum(any(grid[i, j] for i in range(len(det))) for j in range(len(gold))) / len(gold) if gold else 1.0
    p = sum(any(grid[i, j] for j in range(len(gold))) for i in range(len(det))) / len(det) if det else 1.0
    return r, p


# --------------------------------------------------------------------------- pii metrics


GOLD4 = [(0, 5, "IP_ADDRESS"), (10, 15, "DEVICE_ID"), (20, 30, "LOCATION"), (40, 44, "PERSON_NAME")]


def test_pii_perfect():
    gold = GOLD4[:3]
    assert pii_metrics(gold, gold) == (1.0, 1.0, 1.0)


def test_pii_two_of_three():
    r, p, f = pii_metrics(GOLD4[:2], GOLD4[:3])
    assert (r, p) == (pytest.approx(2 / 3), 1.0)
    assert f == pytest.approx(0.8)


def test_pii_wrong_type_4x4():
    det = GOLD4[:3] + [(40, 44, "ORG_NAME")]
    r, p, _ = pii_metrics(det, GOLD4)
    assert (r, p) == (0.75, 0.75)
    assert (r, p) == _oracle_pii(det, GOLD4)


def test_pii_empty():
    assert pii_metrics([], []) == (1.0, 1.0, 1.0)
    assert pii_metrics([], GOLD4)[:2] == (0.0, 1.0)
    assert pii_metrics(GOLD4, [])[:2] == (1.0, 0.0)


def test_spans_match_threshold():
    assert spans_match((0, 10, "X"), (5, 10, "X"))  # 5 of 10
    assert not spans_match((0, 10, "X"), (6, 10, "X"))
    assert not spans_match((0, 10, "X"), (0, 10, "Y"))


span_st = st.tuples(st.integers(0, 40), st.integers(1, 12), st.sampled_from(["IP_ADDRESS", "LOCATION", "DEVICE_ID"])).map(
    lambda t: (t[0], t[0] + t[1], t[2])
)


@settings(max_examples=200, deadline=None)
@given(st.lists(span_st, max_size=6), st.lists(span_st, max_size=6), st.randoms())
def test_pii_oracle_and_permutation(det, gold, rnd):
    r, p, f = pii_metrics(det, gold)
    assert (r, p) == pytest.approx(_oracle_pii(det, gold))
    assert 0 <= r <= 1 and 0 <= p <= 1 and 0 <= f <= 1
    d2, g2 = det[:], gold[:]
    rnd.shuffle(d2)
    rnd.shuffle(g2)
    assert pii_metrics(d2, g2) == pytest.approx((r, p, f))


# --------------------------------------------------------------------------- retention and preservation


def test_retention_drop_one_of_ten():
    q = "one two three four five six seven eight nine ten"
    assert token_retention(q, q.replace(" five", "")) == pytest.approx(0.9)
    assert token_retention(q, q) == 1.0


def test_retention_all_entities_is_one():
    assert token_retention("10.0.0.1", "[IP]", [{"start": 0, "end": 8, "type": "IP_ADDRESS"}]) == 1.0


def test_retention_table5_oracle(res):
    anon = anonymize(TABLE5_QUERY, res.scorer.assign(UserQuery(TABLE5_QUERY)), hierarchy=res.hierarchy, detector=res.detector)
    ents = [e.to_dict() for e in detect_entities(TABLE5_QUERY)]
    got = token_retention(TABLE5_QUERY, anon.text, ents)
    assert got == pytest.approx(_oracle_retention(TABLE5_QUERY, anon.text, ents))
    assert 0.0 < got <= 1.0


def test_preservation_examples(res):
    assert preservation_score("the link is down", "the link is down", res.embedder) == pytest.approx(100.0)
    assert preservation_score("sensor offline", "router congested", res.embedder) == 0.0
    anon = anonymize(TABLE5_QUERY, None, hierarchy=res.hierarchy, detector=res.detector)
    assert preservation_score(TABLE5_QUERY, anon.text, res.embedder) == pytest.approx(_oracle_preservation(TABLE5_QUERY, anon.text), abs=1e-6)


# --------------------------------------------------------------------------- translation proxies


def _tq(constraints):
    text = " ".join(c.expression for c in constraints) or "x"
    return TechnicalQuery(text, tuple(constraints), 0.5)


def test_hallucination_examples(res):
    ok = [Constraint("performance", "latency > 200 ms", "explicit", "metric_op_value"), Constraint("temporal", "since 09:00", "explicit", "since_clock")]
    assert hallucination_rate(ok, res.ontology) == 0.0
    four = ok + [Constraint("segment", "core network", "implicit", "healthcare_stream_loss"), Constraint("protocol", "protocol QUIC", "explicit", "invented")]
    assert hallucination_rate(four, res.ontology) == 25.0
    assert translation_metrics("q", _tq([]), res.ontology).hallucination == 0.0


def test_translation_proxies_oracle(res, fixture200):
    for s in fixture200[:40]:
        assign = res.scorer.assign(UserQuery(s.query))
        anon = anonymize(s.query, assign, hierarchy=res.hierarchy, detector=res.detector)
        tq = translate(anon.text, assign, s.intent, res.ontology)
        m = translation_metrics(anon.text, tq, res.ontology, s.vertical, s.intent, res.embedder)
        src, out = set(_tokens(anon.text)), set(_tokens(tq.text))
        assert m.overlap == pytest.approx(100.0 * len(src & out) / len(src) if src else 0.0)
        terms = [t.term for t in res.ontology.terms if re.search(rf"(?<![\w-]){re.escape(t.pattern)}(?![\w-])", anon.text, re.I)]
        rules = [c for r in res.ontology.rules if r.vertical == s.vertical and r.intent in ("*", s.intent) for _, c in r.constraints]
        expected = list(dict.fromkeys(terms + rules))
        cov = 100.0 * sum(a.lower() in tq.text.lower() for a in expected) / len(expected) if expected else 100.0
        assert m.coverage == pytest.approx(cov)
        assert m.similarity == pytest.approx(_oracle_preservation(anon.text, tq.text), abs=1e-6)
        assert m.hallucination == 0.0


# --------------------------------------------------------------------------- bounds fuzz

WORDS = "the sensor 10.0.0.1 stopped latency 200 ms ICU John Smith uplink RSRP signal strength [IP_PATIENT] dashboard".split()


def test_metric_bounds_fuzz(res):
    rng = random.Random(99)
    for _ in range(1000):
        q = " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))
        qp = " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))
        ents = [e.to_dict() for e in detect_entities(q)]
        assert 0.0 <= token_retention(q, qp, ents) <= 1.0
        assert 0.0 <= preservation_score(q, qp, res.embedder) <= 100.0
        r, p, f = pii_metrics(detect_entities(qp), ents)
        assert all(0.0 <= x <= 1.0 for x in (r, p, f))
        m = translation_metrics(q, _tq([]), res.ontology, "healthcare_telemetry", "Packet_Loss", res.embedder)
        assert all(0.0 <= x <= 100.0 for x in (m.overlap, m.coverage, m.similarity, m.hallucination))


# --------------------------------------------------------------------------- scenarios


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_scenarios(generate_scenarios(10, seed=7), a)
    save_scenarios(generate_scenarios(10, seed=7), b)
    assert a.read_bytes() == b.read_bytes()
    assert [s.to_dict() for s in load_scenarios(a)] == [s.to_dict() for s in generate_scenarios(10, seed=7)]


def test_intent_frequencies_match_weights():
    ts = TemplateSet.load()
    freqs = intent_frequencies(generate_scenarios(10_000, seed=1, templates=ts))
    total = sum(ts.intent_weights.values())
    for intent, w in ts.intent_weights.items():
        assert abs(freqs.get(intent, 0.0) - w / total) < 0.03, intent
    connectivity = (ts.intent_weights["Network_Connectivity_Loss"] + ts.intent_weights["Intermittent_Connectivity"] + ts.intent_weights["Data_Transmission_Failure"]) / total
    assert connectivity > 0.5


def test_ip_slot_yields_ip_gold():
    ts = TemplateSet.load()
    ip_templates = [t for t in ts.templates if "{IP}" in t[1]]
    assert ip_templates
    one = TemplateSet((ip_templates[0],), ts.verticals, {ip_templates[0][0]: 1.0}, ts.vertical_weights)
    for s in generate_scenarios(50, seed=3, templates=one):
        assert any(e["type"] == "IP_ADDRESS" for e in s.entities)


def test_gold_recoverable_by_detector(fixture200):
    for s in fixture200:
        found = detect_entities(s.query)
        got = [(e.start, e.end, e.etype.value) for e in found]
        for e in s.entities:
            assert (e["start"], e["end"], e["type"]) in got, (s.id, e)
            assert s.query[e["start"] : e["end"]] == e["surface"]


def test_scenario_span_validation():
    with pytest.raises(ValidationError):
        Scenario("x", "abc", "I", "v", [{"start": 0, "end": 5, "type": "IP_ADDRESS", "surface": "abcde"}])
    with pytest.raises(ValidationError):
        Scenario("x", "abcdef", "I", "v", [{"start": 0, "end": 3, "type": "A", "surface": "abc"}, {"start": 2, "end": 4, "type": "A", "surface": "cd"}])


# --------------------------------------------------------------------------- suite


FROZEN_200 = {"n_scenarios": 200, "n_errored": 0, "pii_recall": 1.0, "pii_precision": 1.0, "hallucination": 0.0, "token_retention": 1.0, "coverage": 100.0}


def test_suite_on_fixture(res, cfg, fixture200):
    rep = run_suite(fixture200, res, cfg)
    assert rep.status == "ok"
    for k, v in FROZEN_200.items():
        assert getattr(rep, k) == pytest.approx(v), k
    assert rep.pii_recall >= 0.95
    assert rep.n_answered + rep.n_clarified == 200
    assert rep.pii_f1 == pytest.approx(2 * rep.pii_precision * rep.pii_recall / (rep.pii_precision + rep.pii_recall))
    assert 0 <= rep.preservation <= 100 and 0 <= rep.similarity <= 100
    assert rep.fre_min <= rep.fre_mean <= rep.fre_max
    assert len(rep.to_tsv().splitlines()) == 201


def test_suite_empty(res, cfg):
    rep = run_suite([], res, cfg)
    assert rep.status == NO_DATA and rep.rows == [] and rep.n_scenarios == 0
    assert rep.pii_recall is None


def test_suite_rerun_identical_bytes(res, cfg, fixture200, tmp_path):
    a = run_suite(fixture200[:40], res, cfg)
    b = run_suite(fixture200[:40], res, cfg)
    assert a.to_json() == b.to_json() and a.to_tsv() == b.to_tsv()
    a.write(tmp_path / "a.json", tmp_path / "a.tsv")
    assert json.loads((tmp_path / "a.json").read_text()) == json.loads(a.to_json())


def test_aggregate_order_independent(res, cfg, fixture200):
    rows = run_suite(fixture200[:30], res, cfg).rows
    shuffled = rows[:]
    random.Random(5).shuffle(shuffled)
    a, b = aggregate(rows).to_dict(False), aggregate(shuffled).to_dict(False)
    for k in a:
        assert a[k] == pytest.approx(b[k]) if isinstance(a[k], float) else a[k] == b[k]


def test_errored_rows_excluded():
    ok = {"outcome": "answered", "pii_recall": 1.0, "fre": 70.0}
    bad = {"outcome": "error", "pii_recall": 0.0, "fre": None}
    rows = [dict({k: None for k in ("pii_precision", "pii_f1", "token_retention", "preservation", "overlap", "coverage", "similarity", "hallucination")}, **r) for r in (ok, bad)]
    rep = aggregate(rows)
    assert rep.n_errored == 1 and rep.pii_recall == 1.0 and rep.fre_mean == 70.0
