import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bamlab.estimator import PositionalLM, check_tokens


def test_check_tokens():
    out = check_tokens([[1, 2, 3], np.array([4.0, 5.0])], vocab_size=8)
    assert [o.dtype for o in out] == [np.int64, np.int64]
    assert len(check_tokens(np.array([1, 2]))) == 1
    with pytest.raises(ValueError, match="outside"):
        check_tokens([[1, 9]], vocab_size=8)
    with pytest.raises(ValueError, match="non-integer"):
        check_tokens([[1.5]])
    with pytest.raises(ValueError, match="1-D"):
        check_tokens([[[1]]])
    with pytest.raises(ValueError, match="shorter"):
        check_tokens([[1]], min_length=2)
    with pytest.raises(ValueError, match="no sequences"):
        check_tokens([])


def test_get_params_and_clone():
    est = PositionalLM(pe_kind="alibi", steps=5)
    params = est.get_params()
    assert params["pe_kind"] == "alibi" and params["steps"] == 5
    twin = clone(est)
    assert twin.get_params() == params


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        PositionalLM().predict([[1, 2]])


def test_fit_predict_score():
    seqs = [np.arange(16) % 20 for _ in range(4)]
    est = PositionalLM(vocab_size=20, d_model=16, n_heads=2, n_layers=1, train_context=16,
                       steps=150, batch_size=4).fit(seqs)
    assert est.predict([np.arange(5)]).tolist() == [5]
    lp = est.predict_log_proba([np.arange(3), np.arange(7)])
    assert lp.shape == (2, 20)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-9)
    assert -2.0 < est.score(seqs) <= -1.0
    assert est.generate([0, 1], 3).tolist()[-3:] == [2, 3, 4]
