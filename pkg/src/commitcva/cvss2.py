"""CVSS v2 base-score equations and the Low/Medium/High severity banding."""

from __future__ import annotations

import math

from .types import CvssAssessment

ACCESS_VECTOR = {"Local": 0.395, "Adjacent Network": 0.646, "Network": 1.0}
ACCESS_COMPLEXITY = {"High": 0.35, "Medium": 0.61, "Low": 0.71}
AUTHENTICATION = {"Multiple": 0.45, "Single": 0.56, "None": 0.704}
IMPACT = {"None": 0.0, "Partial": 0.275, "Complete": 0.660}


def _round1(x: float) -> float:
    # round half up to one decimal, as the v2 calculator does
    return math.floor(x * 10 + 0.5) / 10


def base_score(
    access_vector: str,
    access_complexity: str,
    authentication: str,
    confidentiality: str,
    integrity: str,
    availability: str,
) -> float:
    """CVSS v2 base score in [0, 10] from the six metric values."""
    impact = 10.41 * (
        1.0
        - (1.0 - IMPACT[confidentiality])
        * (1.0 - IMPACT[integrity])
        * (1.0 - IMPACT[availability])
    )
    exploitability = (
        20.0
        * ACCESS_VECTOR[access_vector]
        * ACCESS_COMPLEXITY[access_complexity]
        * AUTHENTICATION[authentication]
    )
    f_impact = 0.0 if impact == 0.0 else 1.176
    return _round1((0.6 * impact + 0.4 * exploitability - 1.5) * f_impact)


def severity_band(score: float) -> str:
    """NVD v2 banding: Low [0, 3.9], Medium [4.0, 6.9], High [7.0, 10]."""
    if score >= 7.0:
        return "High"
    if score >= 4.0:
        return "Medium"
    return "Low"


def severity_from_metrics(
    confidentiality: str,
    integrity: str,
    availability: str,
    access_vector: str,
    access_complexity: str,
    authentication: str,
) -> str:
    """Derive the Severity label from the other six predicted metrics."""
    score = base_score(
        access_vector,
        access_complexity,
        authentication,
        confidentiality,
        integrity,
        availability,
    )
    return severity_band(score)


def severity_for(assessment: CvssAssessment) -> str:
    return severity_from_metrics(
        assessment.confidentiality,
        assessment.integrity,
        assessment.availability,
        assessment.access_vector,
        assessment.access_complexity,
        assessment.authentication,
    )
