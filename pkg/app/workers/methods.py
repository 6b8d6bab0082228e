from typing import Optional

from app.schemas.common import Method
from app.usdaf.alignment import AdaptationPlan
from app.usdaf.multilabel import DOMAIN_ENTRIES, SCALE_ENTRIES, FilterConfig

# m con el que el filtro no descarta ninguna predicción en (0, 1)
NEUTRAL_M = 0.5


def adaptation_plan(method: Method, eta: float, m: float) -> Optional[AdaptationPlan]:
    """
    Tabla de métodos

    SourceOnly: sin adaptación; DAF: 1 salida sin filtro; USDAF: 4 salidas con
    filtro m; USDAF_noFM: 4 salidas con m neutro; USDAF_noSAA: 1 salida con filtro m.
    """
    method = Method(method)
    if method is Method.SOURCE_ONLY:
        return None
    if method is Method.DAF:
        return AdaptationPlan(entries=DOMAIN_ENTRIES, filter_config=None, eta=eta)
    if method is Method.USDAF:
        return AdaptationPlan(entries=SCALE_ENTRIES, filter_config=FilterConfig(m), eta=eta)
    if method is Method.USDAF_NO_FM:
        return AdaptationPlan(entries=SCALE_ENTRIES, filter_config=FilterConfig(NEUTRAL_M), eta=eta)
    return AdaptationPlan(entries=DOMAIN_ENTRIES, filter_config=FilterConfig(m), eta=eta)
