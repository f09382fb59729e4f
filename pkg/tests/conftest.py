import pytest

from .sqlfixtures import COMPANY_SCHEMA, build_company_db


@pytest.fixture(scope="session")
def company_db(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("fixturedb") / "company.sqlite"
    return build_company_db(str(path))


@pytest.fixture(scope="session")
def company_schema():
    return COMPANY_SCHEMA
