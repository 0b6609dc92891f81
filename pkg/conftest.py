"""Pytest wiring: absl flags are normally parsed by absltest.main()."""
from absl import flags
import pytest


def pytest_configure(config):
  del config  # Unused.
  if not flags.FLAGS.is_parsed():
    flags.FLAGS.mark_as_parsed()


@pytest.fixture(autouse=True, scope='module')
def _fresh_test_tmpdir(tmp_path_factory):
  """Gives each test module its own --test_tmpdir, as a separate run would."""
  saved = flags.FLAGS.test_tmpdir
  flags.FLAGS.test_tmpdir = str(tmp_path_factory.mktemp('absl_testing'))
  yield
  flags.FLAGS.test_tmpdir = saved
