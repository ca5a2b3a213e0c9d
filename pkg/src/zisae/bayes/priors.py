from dataclasses import dataclass, field, fields, replace

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Priors:
    """Hyperparameters shared by all Bayesian estimators.

    Fixed effects get N(0, var_fixed); every variance component gets
    IG(ig_shape, ig_scale); the decay is uniform on [phi_lower, phi_upper].
    ``tau2_2`` is the fixed variance of the zero branch and is never sampled.
    """

    var_fixed: float = 1000.0
    ig_shape: float = 2.0
    ig_scale: float = 1.0
    phi_lower: float = 0.003
    phi_upper: float = 3.0
    tau2_2: float = 1e-6

    def __post_init__(self):
        if min(self.var_fixed, self.ig_shape, self.ig_scale, self.tau2_2) <= 0:
            raise ConfigError("prior variances and IG hyperparameters must be positive")
        if not 0 < self.phi_lower < self.phi_upper:
            raise ConfigError("need 0 < phi_lower < phi_upper")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown prior keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class McmcConfig:
    """Chain layout. Defaults retain 1,000 draws from each of 3 chains."""

    chains: int = 3
    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 10
    seed: int = 0
    chain_seeds: tuple = None
    rhat_threshold: float = 1.1
    phi_proposal_sd: float = 0.3
    adapt_every: int = 50

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must lie in [0, iterations)")
        if self.retained_per_chain < 1:
            raise ConfigError("configuration retains no draws")
        if self.chain_seeds is not None:
            seeds = tuple(int(s) for s in self.chain_seeds)
            if len(seeds) != self.chains:
                raise ConfigError("chain_seeds must list one seed per chain")
            if len(set(seeds)) != len(seeds):
                raise ConfigError("chains must not share a seed")
            object.__setattr__(self, "chain_seeds", seeds)

    @property
    def retained_per_chain(self):
        return (self.iterations - self.burn_in) // self.thin

    @property
    def M(self):
        return self.retained_per_chain * self.chains

    def seed_sequences(self, stream):
        """Independent per-chain seed sequences for a named sampler stage."""
        tag = {"bernoulli": 1, "gaussian": 2}.get(stream, 9)
        if self.chain_seeds is not None:
            return [np.random.SeedSequence([s, tag]) for s in self.chain_seeds]
        return np.random.SeedSequence([self.seed, tag]).spawn(self.chains)

    def with_seed(self, seed):
        return replace(self, seed=int(seed), chain_seeds=None)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown mcmc keys: {sorted(unknown)}")
        if "chain_seeds" in d and d["chain_seeds"] is not None:
            d["chain_seeds"] = tuple(d["chain_seeds"])
        return cls(**d)
