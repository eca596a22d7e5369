"""Builders for random-but-valid model/code/data triples used across tests."""

from __future__ import annotations

import numpy as np

from alsf import numerics
from alsf.model import AlsfModel, Codes, TrainingSet


def random_model(rng: np.random.Generator, d: int, ks: tuple[int, ...],
                 k0: int, labels: list[str] | None = None) -> AlsfModel:
    dicts = [numerics.project_columns_unit(rng.standard_normal((d, k))) for k in ks]
    if k0:
        D0 = numerics.project_columns_unit(rng.standard_normal((d, k0)))
    else:
        D0 = np.zeros((d, 0))
    return AlsfModel(
        class_dicts=dicts,
        shared_dict=D0,
        class_analysis=[rng.standard_normal((k, d)) for k in ks],
        shared_analysis=rng.standard_normal((k0, d)),
        labels=labels,
    )


def random_instance(rng: np.random.Generator, d: int = 30,
                    ks: tuple[int, ...] = (10, 10), k0: int = 5,
                    ns: tuple[int, ...] = (50, 50),
                    ) -> tuple[AlsfModel, Codes, TrainingSet]:
    model = random_model(rng, d, ks, k0)
    data = TrainingSet([rng.standard_normal((d, n)) for n in ns])
    codes = Codes(
        class_codes=[rng.standard_normal((k, n)) for k, n in zip(ks, ns)],
        shared_codes=[rng.standard_normal((k0, n)) for n in ns],
    )
    return model, codes, data
