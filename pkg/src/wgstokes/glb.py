"""Guaranteed-lower-bound constants and certificate checks.

Evaluates the explicit sufficient conditions under which a discrete
eigenvalue computed with the skeletal stabilizer is a guaranteed lower
bound of the exact one: the delta/Lambda conditions for general order,
and the kappa_CR criterion for the lowest-order configuration.  The
approximation constants (C_apx, kappa_CR) are inputs with no built-in
defaults; no numeric values for them are published, and inventing them
would fabricate ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "GlbParams",
    "GlbCertificate",
    "derive_constants",
    "check_conditions",
    "check_lowest_order",
    "format_certificate",
]


@dataclass(frozen=True)
class GlbParams:
    """Derived certificate constants.

    delta = C_apx^2 h_max^2 and
    Lambda = (C_apx + 2/(n+1)) C_apx / (n+1).
    """

    alpha: float
    c_apx: float
    h_max: float
    n: int
    delta: float
    lam: float


@dataclass(frozen=True)
class GlbCertificate:
    """Outcome of a certificate check.

    ``condition`` is "i", "ii" or "lowest-order"; the verdict is
    certified exactly when ``margin >= 0``.  ``extra_margins`` records
    the other evaluated condition(s), if any.
    """

    condition: str
    lhs: float
    threshold: float
    margin: float
    certified: bool
    extra_margins: dict

    @property
    def verdict(self) -> str:
        return "certified-lower-bound" if self.certified else "not-certified"


def derive_constants(alpha: float, c_apx: float, h_max: float, n: int = 2) -> GlbParams:
    """Compute delta and Lambda from the stabilizer and mesh data."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if c_apx <= 0:
        raise ValueError("C_apx must be positive")
    if h_max <= 0:
        raise ValueError("h_max must be positive")
    if n < 1:
        raise ValueError("spatial dimension must be >= 1")
    delta = c_apx**2 * h_max**2
    lam = (c_apx + 2.0 / (n + 1)) * c_apx / (n + 1)
    return GlbParams(alpha=alpha, c_apx=c_apx, h_max=h_max, n=n, delta=delta, lam=lam)


def check_conditions(
    params: GlbParams, lambda_h: float, lambda_ref: float | None = None
) -> GlbCertificate:
    """Evaluate the sufficient conditions for lambda_h <= lambda.

    Condition (ii), delta*lambda_h + alpha*Lambda <= 1, needs only the
    computed eigenvalue and is the default; condition (i) replaces
    lambda_h by a reference eigenvalue and is evaluated only when one
    is supplied.  The certificate records both margins.
    """
    if lambda_h <= 0:
        raise ValueError("lambda_h must be positive")
    margin_ii = 1.0 - (params.delta * lambda_h + params.alpha * params.lam)
    extra = {"ii": margin_ii}
    margin_i = None
    if lambda_ref is not None:
        margin_i = 1.0 - (params.delta * lambda_ref + params.alpha * params.lam)
        extra["i"] = margin_i

    if margin_ii >= 0 or margin_i is None:
        condition, margin, lam_used = "ii", margin_ii, lambda_h
    elif margin_i >= 0:
        condition, margin, lam_used = "i", margin_i, lambda_ref
    else:
        condition, margin, lam_used = "ii", margin_ii, lambda_h
    return GlbCertificate(
        condition=condition,
        lhs=params.delta * lam_used + params.alpha * params.lam,
        threshold=1.0,
        margin=margin,
        certified=margin >= 0,
        extra_margins=extra,
    )


def check_lowest_order(
    alpha: float,
    h_max: float,
    kappa_cr: float,
    lambda_h: float,
    lambda_ref: float | None = None,
) -> GlbCertificate:
    """Lowest-order criterion: max(alpha, min(lambda) h_max^2) <= kappa_CR^{-2}.

    Applies to the k = 1 configuration only.  ``min(lambda)`` is the
    smaller of the discrete and (if given) reference eigenvalues.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if h_max <= 0:
        raise ValueError("h_max must be positive")
    if kappa_cr <= 0:
        raise ValueError("kappa_CR must be positive")
    if lambda_h <= 0:
        raise ValueError("lambda_h must be positive")
    lam_min = lambda_h if lambda_ref is None else min(lambda_h, lambda_ref)
    lhs = max(alpha, lam_min * h_max**2)
    threshold = kappa_cr**-2
    margin = threshold - lhs
    return GlbCertificate(
        condition="lowest-order",
        lhs=lhs,
        threshold=threshold,
        margin=margin,
        certified=margin >= 0,
        extra_margins={},
    )


def format_certificate(cert: GlbCertificate, params: GlbParams | None = None) -> str:
    """Flat key-value text block for experiment reports."""
    lines = []
    if params is not None:
        lines += [
            f"alpha = {params.alpha:.12g}",
            f"C_apx = {params.c_apx:.12g}",
            f"h_max = {params.h_max:.12g}",
            f"n = {params.n}",
            f"delta = {params.delta:.12g}",
            f"Lambda = {params.lam:.12g}",
        ]
    lines += [
        f"condition = {cert.condition}",
        f"lhs = {cert.lhs:.12g}",
        f"threshold = {cert.threshold:.12g}",
        f"margin = {cert.margin:.12g}",
        f"verdict = {cert.verdict}",
    ]
    for name, margin in sorted(cert.extra_margins.items()):
        lines.append(f"margin_{name} = {margin:.12g}")
    return "\n".join(lines) + "\n"
