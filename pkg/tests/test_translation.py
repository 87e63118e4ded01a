import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TABLE5_QUERY
from telebridge.backends import ScriptedBackend, ScriptedFixture
from telebridge.core import UserQuery, ValidationError
from telebridge.privacy import anonymize
from telebridge.translation import (
    UNCONVERGED_CAP,
    Constraint,
    OntologyError,
    TechnicalQuery,
    TelecomOntology,
    constraint_has_source,
    extract_explicit_constraints,
    infer_implicit_constraints,
    map_terms,
    translate,
    validate_translation,
)

CONN_LOSS = "Network_Connectivity_Loss"


def exprs(cs):
    return {(c.kind, c.expression) for c in cs}


def _translate(text, res, intent=CONN_LOSS, critic=None, **kw):
    assign = res.scorer.assign(UserQuery(text))
    return translate(
        text,
        assign,
        intent,
        res.ontology,
        critic,
        checklist=res.checklists["translation"],
        registry=res.registry,
        intent_phrase=res.intents.get(intent).technical_phrase if intent else None,
        **kw,
    )


@pytest.fixture(scope="module")
def table5_anon(res):
    assign = res.scorer.assign(UserQuery(TABLE5_QUERY))
    return anonymize(TABLE5_QUERY, assign, hierarchy=res.hierarchy, detector=res.detector)


# --------------------------------------------------------------------------- explicit constraints


def test_slow_upload():
    assert exprs(extract_explicit_constraints("response is very slow when uploading data")) == {
        ("performance", "uplink throughput degradation")
    }


def test_empty_constraints():
    assert extract_explicit_constraints("") == []


def test_latency_since_9am():
    # hand-applied pattern table: "<metric> above <n unit>" and "since <h>am"
    assert exprs(extract_explicit_constraints("latency above 200 ms since 9am")) == {
        ("performance", "latency > 200 ms"),
        ("temporal", "since 09:00"),
    }


def test_pattern_kinds():
    cs = extract_explicit_constraints("packet loss of 4.5% over the past 2 hours on the radio access network via MQTT")
    assert exprs(cs) == {
        ("performance", "packet loss = 4.5 %"),
        ("temporal", "for the last 2 hours"),
        ("segment", "radio access network"),
        ("protocol", "protocol MQTT"),
    }


def test_placeholder_is_spatial():
    cs = extract_explicit_constraints("link to [IP_PATIENT] dropped in the [REDACTED_LOC]")
    assert exprs(cs) == {("spatial", "[IP_PATIENT]"), ("spatial", "[REDACTED_LOC]")}


def test_constraint_validation():
    with pytest.raises(ValidationError):
        Constraint("weather", "x")
    with pytest.raises(ValidationError):
        Constraint("temporal", "  ")


# --------------------------------------------------------------------------- implicit constraints


def test_smart_grid_latency(res):
    cs = infer_implicit_constraints("smart_grid", "High_Latency", res.ontology)
    assert any(c.kind == "performance" and "latency" in c.expression for c in cs)


def test_no_rule_vertical(res):
    assert infer_implicit_constraints("smart_buildings", CONN_LOSS, res.ontology) == []
    assert infer_implicit_constraints(None, CONN_LOSS, res.ontology) == []


def test_healthcare_connectivity_rule(res):
    cs = infer_implicit_constraints("healthcare_telemetry", CONN_LOSS, res.ontology)
    assert exprs(cs) == {("performance", "telemetry stream continuity"), ("segment", "core network")}
    assert all(c.source == "implicit" for c in cs)


def test_ontology_rejects_duplicates_and_bad_refs():
    with pytest.raises(OntologyError):
        TelecomOntology.from_dict({"terms": [{"pattern": "lag", "term": "latency"}, {"pattern": "LAG", "term": "delay"}]})
    onto = TelecomOntology.from_dict(
        {"implicit_rules": [{"id": "r", "vertical": "mars", "constraints": [{"kind": "performance", "expression": "x"}]}]}
    )
    with pytest.raises(OntologyError):
        onto.validate_references(["smart_grid"], [CONN_LOSS])


# --------------------------------------------------------------------------- terms


def test_map_terms(res):
    assert map_terms("signal strength", res.ontology) == [("signal strength", "RSRP")]
    assert map_terms("network congestion", res.ontology) == [("network congestion", "PRB utilization")]
    assert map_terms("hello world", res.ontology) == []


def test_map_terms_longest_match():
    onto = TelecomOntology.from_dict({"terms": [{"pattern": "signal", "term": "RF"}, {"pattern": "signal strength", "term": "RSRP"}]})
    assert map_terms("weak signal strength, bad signal", onto) == [("signal strength", "RSRP"), ("signal", "RF")]


# --------------------------------------------------------------------------- confidence


def test_validate_translation_examples():
    cs = [Constraint("performance", "a"), Constraint("temporal", "b"), Constraint("segment", "c")]
    terms = [("x", "T1"), ("y", "T2"), ("z", "T3"), ("w", "T4")]
    assert validate_translation("T1 T2 T3 T4 a b c", "", terms, cs) == 1.0
    assert validate_translation("anything", "", [], []) == 0.0
    # 2 of 4 terms, 3 of 3 constraints: 0.5 * 0.5 + 0.5 * 1.0
    assert validate_translation("T1 T2 a b c", "", terms, cs) == pytest.approx(0.75)


def test_technical_query_invariants():
    with pytest.raises(ValidationError):
        TechnicalQuery("text", (Constraint("performance", "absent"),), 0.5)
    with pytest.raises(ValidationError):
        TechnicalQuery("text", (), 1.5)


# --------------------------------------------------------------------------- translate


def test_table5_translation(res, table5_anon):
    t = _translate(table5_anon.text, res)
    assert t.text.startswith("Diagnose cause of data stream termination for IoT device [IP_PATIENT] in core network.")
    assert t.conf_trans == 1.0
    for c in t.constraints:
        assert c.expression.lower() in t.text.lower()
    assert t.reflection.converged and not t.warnings


def test_degenerate_translation_capped(res):
    t = _translate("the thing broke", res, intent=None)
    assert t.constraints == () and t.terms == ()
    assert t.conf_trans == 0.0 <= UNCONVERGED_CAP
    assert t.reflection.last.issues >= 1
    assert any("did not converge" in w for w in t.warnings)


def _critic_failing_once(res):
    items = [i.id for i in res.checklists["translation"].judged]
    fail = "\n".join(f"{i}: {'FAIL' if n == 0 else 'PASS'} - scripted" for n, i in enumerate(items))
    ok = "\n".join(f"{i}: PASS - scripted" for i in items)
    return ScriptedBackend(
        ScriptedFixture(
            {
                r"re:Evaluate output\nComponent: translation\nRound: 1\n.*": fail,
                r"re:Evaluate output\nComponent: translation\n.*": ok,
            }
        )
    )


def test_one_refinement_round(res, table5_anon):
    critic = _critic_failing_once(res)
    t = _translate(table5_anon.text, res, critic=critic)
    assert t.reflection.rounds == 2  # one refinement between two reflections
    assert [r.issues for r in t.reflection.reports] == [1, 0]
    assert t.reflection.converged
    assert len(critic.calls) == 2


def test_critic_never_passes_caps_confidence(res, table5_anon):
    items = [i.id for i in res.checklists["translation"].judged]
    fail = "\n".join(f"{i}: FAIL - scripted" for i in items)
    critic = ScriptedBackend(ScriptedFixture({r"re:Evaluate output\n.*": fail}))
    t = _translate(table5_anon.text, res, critic=critic)
    assert t.reflection.rounds == 3
    assert t.conf_trans == UNCONVERGED_CAP
    assert t.warnings


def test_translation_idempotent(res, table5_anon):
    t1 = _translate(table5_anon.text, res)
    t2 = _translate(t1.text, res)
    assert t2.text == t1.text
    assert exprs(t2.constraints) >= exprs(t1.constraints)


def test_no_pii_in_translation(res, fixture200):
    for s in fixture200[:60]:
        assign = res.scorer.assign(UserQuery(s.query))
        anon = anonymize(s.query, assign, hierarchy=res.hierarchy, detector=res.detector)
        t = _translate(anon.text, res, intent=s.intent)
        for e in s.entities:
            assert e["surface"] not in t.text, (s.id, e)
        for c in t.constraints:
            assert constraint_has_source(c, res.ontology)
            assert c.expression.lower() in t.text.lower()


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.sampled_from(
            [
                "latency above 200 ms",
                "since 9am",
                "for the last 3 hours",
                "slow uploads",
                "signal strength is weak",
                "network congestion",
                "on the core network",
                "over MQTT",
                "the sensor",
                "went quiet",
            ]
        ),
        max_size=6,
    )
)
def test_constraints_traceable_property(res, parts):
    text = " ".join(parts) or "nothing"
    t = translate(text, "factory_automation", "High_Latency", res.ontology)
    for c in t.constraints:
        assert constraint_has_source(c, res.ontology)
        assert c.expression.lower() in t.text.lower()
    assert 0.0 <= t.conf_trans <= 1.0
