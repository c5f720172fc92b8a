import functools

import pytest

from fibwalk.combinatorics import solve_parameter
from fibwalk.induced import build_annuli
from fibwalk.nest import build_nest, scaling_report

DEPTH = 15


@functools.lru_cache(maxsize=None)
def solved(ell: int, K: int = DEPTH):
    return solve_parameter(ell, K)


@functools.lru_cache(maxsize=None)
def nest_for(ell: int, K: int = DEPTH):
    return build_nest(solved(ell, K).fibmap(), K)


@functools.lru_cache(maxsize=None)
def report_for(ell: int, K: int = DEPTH):
    return scaling_report(solved(ell, K).fibmap(), K, nest_for(ell, K))


@functools.lru_cache(maxsize=None)
def partition_for(ell: int, K: int = DEPTH):
    return build_annuli(nest_for(ell, K))


@pytest.fixture(scope="session")
def map2():
    return solved(2).fibmap()


@pytest.fixture(scope="session")
def map16():
    return solved(16).fibmap()


@pytest.fixture(scope="session", params=[2, 8, 16])
def ell(request):
    return request.param
