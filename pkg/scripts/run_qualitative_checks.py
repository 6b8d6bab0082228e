"""
Chequeos cualitativos de adaptación (lentos, no son tests unitarios)

Entrena SourceOnly, DAF, USDAF y las dos ablaciones sobre open_050 y partial
con varias semillas e imprime una tabla PASS/FAIL:

  - USDAF supera a DAF por al menos 2 puntos de mAP y DAF no queda por debajo de SourceOnly
  - DAF sufre transferencia negativa en partial y USDAF no
  - el orden de d0 por grupo se cumple en la mayoría de semillas de open_050
  - USDAF no pierde frente a sus ablaciones y gana a DAF en la mayoría de escalas

Uso:
    python scripts/run_qualitative_checks.py --workers 4 --output runs/qualitative
"""
import argparse
import sys
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.evalkit.reports import frame_to_markdown  # noqa: E402
from app.logger import configure_logging, get_logger  # noqa: E402
from app.schemas.common import BUCKETS, Method  # noqa: E402
from app.workers.suite import RunOutcome, run_suite  # noqa: E402

logger = get_logger()

OPEN_PRESET = "open_050"
PARTIAL_PRESET = "partial"
TIE = 0.005
MIN_GAIN = 0.02


def _maps(outcomes: Sequence[RunOutcome], preset: str, label: str) -> Dict[int, float]:
    return {
        o.spec.seed: o.metrics.mean_ap
        for o in outcomes
        if o.ok and o.spec.preset == preset and o.spec.label == label
    }


def _median(values: Dict[int, float]) -> float:
    return float(np.median(list(values.values()))) if values else float("nan")


def check_adaptation_helps(outcomes) -> dict:
    usdaf = _median(_maps(outcomes, OPEN_PRESET, Method.USDAF.value))
    daf = _median(_maps(outcomes, OPEN_PRESET, Method.DAF.value))
    source = _median(_maps(outcomes, OPEN_PRESET, Method.SOURCE_ONLY.value))
    passed = usdaf - daf >= MIN_GAIN and daf >= source - TIE
    return {
        "check": "adaptación ayuda (open_050)",
        "passed": passed,
        "detail": f"USDAF={usdaf:.4f} DAF={daf:.4f} SourceOnly={source:.4f}",
    }


def check_negative_transfer(outcomes) -> dict:
    source = _maps(outcomes, PARTIAL_PRESET, Method.SOURCE_ONLY.value)
    daf = _maps(outcomes, PARTIAL_PRESET, Method.DAF.value)
    usdaf = _maps(outcomes, PARTIAL_PRESET, Method.USDAF.value)
    daf_losses = [s for s in daf if s in source and daf[s] < source[s]]
    usdaf_holds = bool(usdaf) and all(s in source and usdaf[s] >= source[s] - TIE for s in usdaf)
    return {
        "check": "transferencia negativa (partial)",
        "passed": bool(daf_losses) and usdaf_holds,
        "detail": f"DAF < SourceOnly en semillas {daf_losses}; USDAF ≥ SourceOnly en todas: {usdaf_holds}",
    }


def check_group_ordering(outcomes) -> dict:
    runs = [
        o for o in outcomes
        if o.ok and o.spec.preset == OPEN_PRESET and o.spec.label == Method.USDAF.value and o.metrics.group_means
    ]
    holding = [o.spec.seed for o in runs if o.metrics.group_means.ordering_holds]
    needed = (len(runs) // 2) + 1 if runs else 1
    return {
        "check": "orden de d0 por grupo (open_050)",
        "passed": len(holding) >= needed,
        "detail": f"se cumple en {len(holding)}/{len(runs)} semillas {holding}",
    }


def check_ablations(outcomes) -> dict:
    usdaf = _median(_maps(outcomes, OPEN_PRESET, Method.USDAF.value))
    no_fm = _median(_maps(outcomes, OPEN_PRESET, Method.USDAF_NO_FM.value))
    no_saa = _median(_maps(outcomes, OPEN_PRESET, Method.USDAF_NO_SAA.value))
    return {
        "check": "ablaciones (open_050)",
        "passed": usdaf >= no_fm - TIE and usdaf >= no_saa - TIE,
        "detail": f"USDAF={usdaf:.4f} noFM={no_fm:.4f} noSAA={no_saa:.4f}",
    }


def check_scale_buckets(outcomes) -> dict:
    def bucket_medians(label: str) -> Dict[str, float]:
        result = {}
        for bucket in BUCKETS:
            values = [
                o.metrics.per_scale_map.get(bucket)
                for o in outcomes
                if o.ok and o.spec.preset == OPEN_PRESET and o.spec.label == label
            ]
            values = [v for v in values if v is not None]
            if values:
                result[bucket.value] = float(np.median(values))
        return result

    usdaf, daf = bucket_medians(Method.USDAF.value), bucket_medians(Method.DAF.value)
    shared = sorted(set(usdaf) & set(daf))
    wins = [b for b in shared if usdaf[b] >= daf[b] - TIE]
    return {
        "check": "USDAF ≥ DAF por escala (open_050)",
        "passed": len(wins) >= min(2, len(shared)) and bool(shared),
        "detail": f"gana en {wins} de {shared}",
    }


CHECKS = [check_adaptation_helps, check_negative_transfer, check_group_ordering, check_ablations, check_scale_buckets]


def main(argv: List[str] = None) -> int:
    parser = argparse.ArgumentParser(description="Chequeos cualitativos de adaptación")
    parser.add_argument("--seeds", default="1,2,3")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--output", type=Path, default=Path("runs") / "qualitative")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    print('\n' + '=' * 60)
    print('CHEQUEOS CUALITATIVOS')
    print('=' * 60 + '\n')

    result = run_suite(
        presets=[OPEN_PRESET, PARTIAL_PRESET],
        methods=list(Method),
        seeds=[int(s) for s in args.seeds.split(",")],
        output_root=args.output,
        workers=args.workers,
    )
    if result.failures:
        logger.error(f"{len(result.failures)} corridas fallidas; los chequeos usan solo las exitosas")

    table = pd.DataFrame([check(result.outcomes) for check in CHECKS])
    table["passed"] = table["passed"].map({True: "PASS", False: "FAIL"})
    print(frame_to_markdown(table))
    print(f"\nTablas completas en {args.output}")

    print('\n' + '=' * 60)
    print('CHEQUEOS COMPLETADOS')
    print('=' * 60 + '\n')
    return 0 if (table["passed"] == "PASS").all() else 1


if __name__ == "__main__":
    sys.exit(main())
