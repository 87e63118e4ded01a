import pytest
from hypothesis import given, strategies as st

from telebridge.core import (
    STAGE_ORDER,
    ConfigError,
    PipelineConfig,
    PipelineTrace,
    StageRecord,
    UserQuery,
    ValidationError,
    digest,
    load_config,
    parse_config,
)


def test_config_thresholds_from_file(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("routing.theta_high = 0.85\nrouting.theta_low = 0.65\n")
    cfg = load_config(p)
    assert (cfg.theta_high, cfg.theta_low) == (0.85, 0.65)


def test_empty_config_is_defaults():
    assert parse_config("") == PipelineConfig()
    assert parse_config("# only a comment\n\n") == PipelineConfig()


def test_inverted_thresholds_rejected():
    with pytest.raises(ValidationError, match="theta_low < theta_high"):
        parse_config("theta_high = 0.5\ntheta_low = 0.7")


def test_bare_field_names_and_inf():
    cfg = parse_config("epsilon = inf\nk_anon = 10")
    assert cfg.epsilon == float("inf") and cfg.k_anon == 10


@pytest.mark.parametrize("text", ["routing.theta_hgh = 0.9", "theta_high", "k_anon = many", "theta_high ="])
def test_bad_config_lines(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_shipped_config_files_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "default.conf") == PipelineConfig()
    assert load_config(root / "strict_privacy.conf").k_anon == 20


def test_user_query_rejects_blank():
    with pytest.raises(ValidationError):
        UserQuery("   ")


def test_digest_preview_optional():
    assert "preview" in digest("abc")
    assert set(digest("abc", preview=False)) == {"sha256"}


def test_trace_rejects_out_of_order_stage():
    t = PipelineTrace("r")
    t.add(StageRecord("domain_aware", {}, {}, "x"))
    with pytest.raises(ValidationError):
        t.add(StageRecord("privacy", {}, {}, "x"))


_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=30)


@given(
    n=st.integers(0, len(STAGE_ORDER)),
    decision=_text,
    duration=st.floats(0, 1e6, allow_nan=False),
    warnings=st.lists(_text, max_size=3),
    detail=st.dictionaries(st.text(min_size=1, max_size=5), st.integers() | _text, max_size=3),
)
def test_trace_json_round_trip(n, decision, duration, warnings, detail):
    t = PipelineTrace("req")
    for stage in STAGE_ORDER[:n]:
        t.add(StageRecord(stage, digest(decision), digest(decision, False), decision, None, duration, detail, warnings))
    assert PipelineTrace.from_json(t.to_json()) == t
