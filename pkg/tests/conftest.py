import pytest

from clinaudit.release import DEFECTS, ReleaseConfig, build_release


@pytest.fixture(scope="session")
def golden_bundle(tmp_path_factory):
    return build_release(tmp_path_factory.mktemp("golden") / "bundle")


@pytest.fixture(scope="session")
def mutant_bundles(tmp_path_factory):
    root = tmp_path_factory.mktemp("mutants")
    return {d: build_release(root / d, ReleaseConfig(defect=d)) for d in DEFECTS}
