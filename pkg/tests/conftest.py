from __future__ import annotations

import pytest
from hypothesis import settings

from ctxcm import bundled
from ctxcm.formats.ontology import parse_ontology
from ctxcm.formats.trace import parse_trace

settings.register_profile("ci", deadline=None, max_examples=100)
settings.load_profile("ci")

DEMO = "Organise Handheld Demo Workshop"
RECRUIT = "Organise Recruiting Workshop"
JOB = "Work as a researcher within DSTO"
PROJECT = "Work on the Ubiquitous computing and smart room project"
TASK = "Technology transfer of handheld computing devices into defence organisations"


@pytest.fixture(scope="session")
def workshop():
    return parse_ontology(bundled("workshop.ctx"))


@pytest.fixture(scope="session")
def two_workshops():
    return parse_ontology(bundled("two_workshops.ctx"))


@pytest.fixture(scope="session")
def workshop_trace():
    return parse_trace(bundled("workshop.trace"))


@pytest.fixture(scope="session")
def two_phase_trace():
    return parse_trace(bundled("two_phase.trace"))
