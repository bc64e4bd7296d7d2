"""Shared fixtures. Expensive artifacts (full-size device, enrolled
sessions) are session-scoped; everything is seed-fixed so runs are
reproducible."""

import hashlib

import pytest

from zkmfa import SessionParams, build_enrollment, synth_device
from zkmfa import biometric, puf
from zkmfa.derivation import Nonce512

PASSWORD = "test-password"


def tag_nonce(label: str) -> Nonce512:
    return Nonce512.from_bytes(hashlib.shake_256(f"test:{label}".encode()).digest(64))


def tag(label: str) -> bytes:
    return hashlib.shake_256(f"test:{label}".encode()).digest(32)


@pytest.fixture(scope="session")
def device():
    return synth_device(tag("device"), flaky_fraction=0.05, flaky_flip_prob=0.15)


@pytest.fixture(scope="session")
def quiet_device():
    return synth_device(tag("quiet-device"), flaky_fraction=0.0)


@pytest.fixture(scope="session")
def device_reads(device):
    return [puf.power_cycle_read(device, tag(f"read-{k}")) for k in range(20)]


@pytest.fixture(scope="session")
def person():
    return biometric.synth_person(tag("person-0"))


@pytest.fixture(scope="session")
def other_person():
    return biometric.synth_person(tag("person-1"))


@pytest.fixture(scope="session")
def enroll_frames(person):
    frames = [biometric.synth_frame(person, "moment", tag(f"ef-m{i}"))
              for i in range(5)]
    frames += [biometric.synth_frame(person, "variation", tag(f"ef-v{i}"))
               for i in range(15)]
    return frames


@pytest.fixture(scope="session")
def session_params():
    return SessionParams(accuracy_bits=7, chopped_msbs=1)


@pytest.fixture(scope="session")
def enrollment(device_reads, enroll_frames, session_params):
    return build_enrollment(device_reads, enroll_frames, PASSWORD,
                            tag_nonce("enroll"), session_params)
