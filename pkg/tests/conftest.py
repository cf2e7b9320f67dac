import numpy as np
import pytest

from contlearn.config import resolve_config


def tiny_config(strategy_name="finetune", tasks=2, max_epochs=2, **strategy_kw):
    """Small synthetic run config used by lifecycle-level tests."""
    raw = {
        "dataset": {"kind": "synthetic", "classes": 4, "per_class": 24,
                    "test_per_class": 8, "image_size": 8, "separation": 3.0, "seed": 0},
        "tasks": tasks,
        "arch": {"name": "tinycnn", "dropout": False},
        "strategy": {"name": strategy_name, **strategy_kw},
        "schedule": {"max_epochs": max_epochs},
        "train": {"batch_size": 16},
        "seeds": [1],
    }
    return resolve_config(raw)


@pytest.fixture
def assert_nets_equal():
    def check(a, b):
        pa, pb = a.named_params(), b.named_params()
        assert set(pa) == set(pb)
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k], err_msg=k)
        ba, bb = a.named_buffers(), b.named_buffers()
        for k in ba:
            np.testing.assert_array_equal(ba[k], bb[k], err_msg=k)

    return check
