import pytest

from pdprog.cohort import parse_cohort, write_cohort
from pdprog.synthcohort import SynthSpec, generate_cohort


@pytest.fixture(scope="session")
def tiny_spec():
    # small but structurally complete: every visit, every measure family
    return SynthSpec(n_subjects=12, seed=3)


@pytest.fixture(scope="session")
def tiny_cohort(tiny_spec):
    return generate_cohort(tiny_spec)


@pytest.fixture(scope="session")
def midsize_cohort():
    # enough subjects for 3x3 nested CV and stable summary statistics
    return generate_cohort(SynthSpec(n_subjects=40, seed=11))


@pytest.fixture()
def cohort_files(tmp_path):
    """Write a cohort to CSV and hand back (clinical_path, device_path)."""

    def write(cohort, manifest_ref=None):
        clinical = tmp_path / "clinical.csv"
        device = tmp_path / "device.csv"
        write_cohort(cohort, clinical, device, manifest_ref=manifest_ref)
        return clinical, device

    return write


@pytest.fixture()
def roundtrip(cohort_files):
    def go(cohort):
        clinical, device = cohort_files(cohort)
        return parse_cohort(clinical, device)

    return go
