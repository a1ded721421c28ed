import json
import random

import pytest

from benchtop.catalog import (
    Catalog,
    ObjectModel,
    Shape,
    Source,
    load_default_catalog,
    parse_catalog,
    tokenize,
)
from benchtop.errors import DuplicateId, EmptyFilteredSet, MalformedCatalog


def _model(id="apple", **over):
    base = dict(
        id=id,
        display_name=id.replace("_", " "),
        aliases=(),
        source=Source.SEEN_SET,
        shape=Shape.BOX,
        dimensions_m=(0.05, 0.05, 0.05),
        graspable=True,
        container=False,
        support_surface=False,
    )
    base.update(over)
    return ObjectModel(**base)


def test_population_is_18_plus_65(catalog):
    assert len(catalog) == 83
    assert catalog.count(Source.SEEN_SET) == 18
    assert catalog.count(Source.UNSEEN_SET) == 65


def test_models_sorted_by_id(catalog):
    ids = [m.id for m in catalog.models]
    assert ids == sorted(ids)


def test_every_display_name_resolves_to_its_model(catalog):
    for model in catalog.models:
        assert catalog.resolve(model.display_name).id == model.id


def test_every_alias_resolves_to_its_model(catalog):
    for model in catalog.models:
        for alias in model.aliases:
            assert catalog.resolve(alias).id == model.id


def test_resolve_is_case_and_space_insensitive(catalog):
    assert catalog.resolve("  Coke   CAN ").id == "coke_can"


def test_resolve_by_token_subset(catalog):
    # "bottle" alone is ambiguous-or-partial; full phrase tokens match
    assert catalog.resolve("plastic bottle").id == "blue_plastic_bottle"


def test_resolve_no_match_returns_none(catalog):
    assert catalog.resolve("flux capacitor") is None


def test_resolve_blank_is_an_error(catalog):
    with pytest.raises(ValueError):
        catalog.resolve("   ")


def test_resolve_tie_breaks_to_smallest_id():
    cat = Catalog(
        models=(
            _model("b_widget", display_name="widget"),
            _model("a_widget", display_name="widget"),
        ),
        version="1",
    )
    assert cat.resolve("widget").id == "a_widget"


def test_duplicate_id_rejected():
    with pytest.raises(DuplicateId):
        Catalog(models=(_model("x"), _model("x")), version="1")


def test_nonpositive_dimension_rejected():
    with pytest.raises(MalformedCatalog):
        Catalog(models=(_model(dimensions_m=(0.1, 0.0, 0.1)),), version="1")


def test_parse_catalog_missing_field():
    doc = {"version": "1", "models": [{"id": "a"}]}
    with pytest.raises(MalformedCatalog):
        parse_catalog(json.dumps(doc))


def test_parse_catalog_bad_json():
    with pytest.raises(MalformedCatalog):
        parse_catalog("{nope")


def test_filtered_and_without(catalog):
    seen = catalog.filtered(Source.SEEN_SET)
    assert len(seen) == 18
    assert all(m.source is Source.SEEN_SET for m in seen.models)
    smaller = catalog.without({"apple"})
    assert len(smaller) == 82
    assert "apple" not in smaller


def test_without_everything_is_an_error(catalog):
    with pytest.raises(EmptyFilteredSet):
        catalog.without({m.id for m in catalog.models})


def test_tokenize():
    assert tokenize("Blue  plastic-bottle 7Up!") == ("blue", "plastic", "bottle", "7up")


def _chi_square_threshold(df: int) -> float:
    # Wilson-Hilferty approximation of the 99.9th chi-square percentile
    z = 3.0902
    h = 2.0 / (9.0 * df)
    return df * (1.0 - h + z * (h**0.5)) ** 3


@pytest.mark.parametrize(
    "source,bins", [(Source.SEEN_SET, 18), (Source.UNSEEN_SET, 65)]
)
def test_sample_random_is_uniform(catalog, source, bins):
    """Chi-square goodness of fit at 1,000 expected draws per model."""
    rng = random.Random(20240817)
    draws = bins * 1000
    counts = {m.id: 0 for m in catalog.models if m.source is source}
    for _ in range(draws):
        counts[catalog.sample_random(rng, source).id] += 1
    expected = draws / bins
    chi2 = sum((n - expected) ** 2 / expected for n in counts.values())
    assert chi2 < _chi_square_threshold(bins - 1)


def test_sample_random_empty_pool():
    cat = Catalog(models=(_model(),), version="1")
    with pytest.raises(EmptyFilteredSet):
        cat.sample_random(random.Random(0), Source.UNSEEN_SET)


def test_heights_are_plausible(catalog):
    for model in catalog.models:
        assert 0.0 < model.height_m <= 0.3
        assert model.height_m == model.dimensions_m[2]


def test_containers_and_supports_exist_in_both_sets(catalog):
    for source in Source:
        pool = [m for m in catalog.models if m.source is source]
        assert any(m.container for m in pool)
        assert any(m.support_surface for m in pool)
        assert any(m.graspable for m in pool)
