import os

import pytest
from hypothesis import HealthCheck, settings as hypothesis_settings

from reluzono.config import settings

hypothesis_settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis_settings.register_profile(
    "ci", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
hypothesis_settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture(autouse=True)
def default_settings():
    # the CLI writes into the settings singleton; keep tests independent
    snapshot = dict(vars(settings))
    yield
    for name in list(vars(settings)):
        if name not in snapshot:
            delattr(settings, name)
    for name, value in snapshot.items():
        setattr(settings, name, value)
