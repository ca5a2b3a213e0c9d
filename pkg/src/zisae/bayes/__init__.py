from .chains import (BayesFit, BernoulliFit, fit_bayes, fit_bernoulli_stage, fit_gaussian_stage,
                     rhat_table, run_chains, run_stage)
from .conditionals import psrf
from .draws import ChainDiagnostics, PosteriorDraws
from .priors import ConfigError, McmcConfig, Priors
