import numpy as np
import pytest

from reluzono import rng
from reluzono.config import Settings, settings


def test_defaults_live_on_the_class():
    assert settings.tol_feas == Settings.tol_feas == 1e-8
    assert settings.workers == 1


def test_override_restores():
    with settings.override(chamber_cap=10, workers=4) as s:
        assert s is settings
        assert settings.chamber_cap == 10 and settings.workers == 4
    assert settings.chamber_cap == Settings.chamber_cap
    assert settings.workers == 1


def test_override_restores_after_an_error():
    with pytest.raises(RuntimeError):
        with settings.override(gp_tol=1e-3):
            raise RuntimeError
    assert settings.gp_tol == Settings.gp_tol


@pytest.mark.parametrize("name", ["chamber_limit", "_check", "override"])
def test_unknown_names(name):
    with pytest.raises(AttributeError):
        settings.update(**{name: 1})
    with pytest.raises(AttributeError):
        with settings.override(**{name: 1}):
            pass


def test_as_dict_lists_every_setting():
    values = settings.as_dict()
    assert values["tol_feas"] == Settings.tol_feas
    assert "as_dict" not in values and "override" not in values
    with settings.override(workers=3):
        assert settings.as_dict()["workers"] == 3


def test_update_persists():
    settings.update(log_every=7)
    assert settings.log_every == 7
    assert "log_every=7" in repr(settings)


# random streams ####################


def test_streams_are_reproducible_and_independent():
    a = rng.stream(5, "init").standard_normal(4)
    np.testing.assert_array_equal(a, rng.stream(5, "init").standard_normal(4))
    assert not np.array_equal(a, rng.stream(5, "search").standard_normal(4))
    assert not np.array_equal(a, rng.stream(6, "init").standard_normal(4))


def test_unknown_stream():
    with pytest.raises(ValueError):
        rng.stream(0, "shuffle")
