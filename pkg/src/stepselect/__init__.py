"""stepselect: pick the coarsest ODE solver step whose Bayesian inference
is indistinguishable from the exact model.

Fixed-step solvers of order p shift posterior and marginal-likelihood values
by O(h^p).  This package estimates per-step marginal likelihoods from MCMC
output, extrapolates them to h -> 0 by regression on h^p, and recommends the
largest step whose Bayes factor against the extrapolated exact model stays
inside the Jeffreys window.
"""

from .bayes import (Dataset, GammaPrior, ParamVector, Prior, likelihood_ratio,
                    log_likelihood, log_posterior_unnorm, log_prior,
                    make_log_posterior, make_logistic_exact_forward,
                    make_solver_forward, max_observable_deviation)
from .errors import (BoundsTooTight, DegenerateFit, DegenerateSampleWarning,
                     GridMismatch, IllConditionedFit, InfiniteVarianceWarning,
                     InitializationError, NoAdmissibleStep, NonFiniteState,
                     NonMonotoneTimes, ParseError, StepSelectError,
                     StuckChainWarning)
from .evidence import (EvidenceEstimate, GridSpec, KdeDensity, bracket_bounds,
                       evidence_from_chain, gelfand_dey, harmonic_mean,
                       kde_fit, quadrature_marginal, subsample_draws)
from .mcmc import (Chain, ProposalConfig, effective_sample_size,
                   load_chain_csv, mh_run, save_chain_csv)
from .models import (GlucoseParams, LogisticParams, OdeSystem, glucose_rhs,
                     logistic_exact, logistic_rhs, make_glucose_system,
                     make_logistic_system)
from .ode import (METHOD_ORDERS, SolverConfig, Trajectory, check_grid,
                  divides, estimate_order, integrate, integrate_states,
                  step_euler, step_rk2, step_rk4)
from .stepfit import (BfReport, EvidenceCurve, bayes_factor, build_report,
                      fit_curve, posterior_discrepancy, recommend_step,
                      within_jeffreys)

__version__ = "0.1.0"
