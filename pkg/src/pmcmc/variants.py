"""Registry of filter variants shared by the samplers and the CLI."""

from __future__ import annotations

from dataclasses import dataclass

from .filters import run_filter
from .mcmc_filters import KernelSpec, run_mcmc_filter
from .proposals import AdaptedFamily, ProposalFamily, TransitionFamily, TunedFamily


@dataclass(frozen=True)
class Variant:
    name: str
    family_cls: type
    weight_mode: str
    mcmc: bool

    def family(self, model, y, **kwargs) -> ProposalFamily:
        if self.family_cls is TunedFamily:
            return TunedFamily(model, y, **kwargs)
        return self.family_cls(model, y)

    def run(self, model, y, N, rng, spec: KernelSpec | None = None, **family_kwargs):
        """Unconditional run.  Returns ``(ParticleSystem, MoveStats | None)``."""
        fam = self.family(model, y, **family_kwargs)
        if self.mcmc:
            return run_mcmc_filter(fam, N, spec or KernelSpec(), rng, mode=self.weight_mode, variant=self.name)
        return run_filter(fam, N, rng, mode=self.weight_mode, variant=self.name), None


VARIANTS = {
    v.name: v
    for v in (
        Variant("pf", TransitionFamily, "bootstrap", False),
        Variant("fa-apf", AdaptedFamily, "adapted", False),
        Variant("apf", TunedFamily, "generic", False),
        Variant("mcmc-pf", TransitionFamily, "bootstrap", True),
        Variant("mcmc-fa-apf", AdaptedFamily, "adapted", True),
        Variant("mcmc-apf", TunedFamily, "generic", True),
    )
}

# the original embedded HMM is not a particle filter but plugs into PMMH and Gibbs
EHMM = "ehmm"
ALL_ALGORITHMS = tuple(VARIANTS) + (EHMM,)


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown filter variant {name!r}; expected one of {tuple(VARIANTS)}") from None
