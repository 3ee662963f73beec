import pytest

from ruinlab.config import DEFAULTS, load_config, parse_config
from ruinlab.errors import ConfigError

BASE = """[model]
premium_rate = 2
claim_intensity = 1
claims.kind = exponential
claims.params.rate = 1
"""


def test_defaults_and_model():
    cfg = parse_config(BASE + "[run]\nseed = 7\n")
    assert cfg.seed == 7
    assert cfg.model.rho == 0.5
    assert cfg.section("ruin") == DEFAULTS["ruin"]
    assert cfg.output["format"] == "csv"


def test_lists_and_overrides():
    cfg = parse_config(BASE + "[ruin]\nu = 0, 2.5, 10\npaths = 50\n")
    sec = cfg.section("ruin")
    assert sec["u"] == [0.0, 2.5, 10.0] and sec["paths"] == 50 and sec["batches"] == DEFAULTS["ruin"]["batches"]


def test_tilted_pareto_and_mixture_models():
    cfg = parse_config("""[model]
premium_rate = 0.5
claim_intensity = 1
claims.kind = tilted_pareto
claims.params.tilt = 1
claims.params.power = 3
claims.params.scale = 0.5
""")
    assert cfg.model.claims.kind == "tilted_pareto"
    cfg = parse_config("""[model]
premium_rate = 3
claim_intensity = 1
claims.kind = mixed_exponential
claims.params.weights = 0.5, 0.5
claims.params.rates = 1, 2
""")
    assert cfg.model.claims.mean == pytest.approx(0.75)


@pytest.mark.parametrize(
    "text, key, line",
    [
        (BASE + "[ruin]\npaths = -3\n", "ruin.paths", 7),
        (BASE + "[ruin]\nbogus = 1\n", "ruin.bogus", 7),
        (BASE + "[nonsense]\nx = 1\n", "nonsense", 6),
        (BASE.replace("premium_rate = 2", "premium_rate = 0.5"), "model", 1),
        (BASE + "[run]\nseed = abc\n", "run.seed", 7),
        (BASE.replace("claims.kind = exponential\n", ""), "model.claims.kind", 1),
        (BASE.replace("rate = 1", "rate = -1"), "model.claims.params.rate", 5),
        (BASE + "[output]\nformat = xml\n", "output.format", 7),
    ],
)
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert exc.value.line == line
    assert key in str(exc.value) and f"line {line}" in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.ini"))


def test_inline_comments_and_claim_kind_line():
    text = "[model]\npremium_rate = 2 ; per unit time\nclaim_intensity = 1\nclaims.kind = weibull\n"
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.key == "model.claims.kind" and e.value.line == 4
    ok = parse_config(text.replace("weibull", "exponential  # light tails") + "claims.params.rate = 1\n")
    assert ok.model.premium_rate == 2.0
