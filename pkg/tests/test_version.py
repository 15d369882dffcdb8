import stochastic_lwr


def test_version():
    """Check that __version__ exists and is a string."""
    assert isinstance(stochastic_lwr.__version__, str)
