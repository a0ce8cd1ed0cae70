"""Tempered posteriors and gradient-free sampling.

Shows the two tempering forms on a small conjugate model (where everything
can be checked against closed forms) and draws from a tempered target with
elliptical slice sampling, which only needs likelihood evaluations.

Run: python3 demos/tempering_and_ess.py
"""

import numpy as np

from semisub.data import Dataset
from semisub.inference import (EssConfig, PriorSpec, ess_sample, log_posterior_and_grad,
                               tempered_log_posterior)
from semisub.model import LikelihoodHead, MlpArchitecture, SsrModel
from semisub.subspace import ControlPoints, build_projection

rng = np.random.default_rng(0)

# A deliberately tiny model: no hidden layers, so the "network" is a linear
# function u * slope + bias and every posterior is Gaussian.
model = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("normal", 1.0))
n = 25
X = rng.standard_normal((n, 1))
U = rng.standard_normal((n, 1))
y = 0.8 * X[:, 0] + 0.5 * U[:, 0] + 0.3 + rng.standard_normal(n)
ds = Dataset(y=y, X=X, U=U, split=np.array(["train"] * n))

sub = build_projection(ControlPoints(points=rng.standard_normal((3, model.d))))
prior = PriorSpec()

phi = np.array([0.2, -0.1])
theta = np.array([0.4])
z = np.concatenate([phi, theta])

# Plain tempering divides the whole log-likelihood by T. At T=1 it is the
# ordinary posterior; at huge T only the prior remains.
ref, _ = log_posterior_and_grad(model, sub, prior, ds.subset("train"), z)
for T in (1.0, 2.0, 10.0, 1e9):
    lp = tempered_log_posterior(model, sub, prior, ds, phi, theta, temperature=T)
    print(f"plain form, T={T:>6}: log posterior {lp:10.3f}")
print(f"untempered reference:  {ref:10.3f}")

# The split form tempers only the subspace marginal p(D | phi), keeping the
# conditional posterior of theta intact. The marginal is computed by
# quadrature over the scalar theta.
print()
for T in (1.0, 2.0, 10.0):
    lp = tempered_log_posterior(model, sub, prior, ds, phi, theta,
                                temperature=T, form="split")
    print(f"split form, T={T:>4}: log posterior {lp:10.3f}")

# Elliptical slice sampling explores a tempered target without gradients.
# The proposal ellipse comes from the Gaussian prior, so only the (tempered)
# likelihood ratio is ever evaluated.
def tempered_loglik(zz, T=2.0):
    joint = tempered_log_posterior(model, sub, prior, ds, zz[:2], zz[2:],
                                   temperature=T)
    empty = (np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1)))
    prior_lp, _ = log_posterior_and_grad(model, sub, prior, empty, zz)
    return joint - prior_lp

prior_sds = np.array([prior.sigma_phi, prior.sigma_phi, prior.sigma_theta])
cfg = EssConfig(n_samples=4000, n_warmup=500, n_chains=2, seed=3)
draws, _, _, _ = ess_sample(tempered_loglik, prior_sds, cfg, np.zeros(3))

print(f"\nESS at T=2: {draws.shape[0]} draws")
print(f"theta posterior: mean {draws[:, 2].mean():+.3f}, sd {draws[:, 2].std():.3f}")

# For comparison, the untempered theta posterior via the same sampler.
untempered = lambda zz: tempered_loglik(zz, T=1.0)
draws1, _, _, _ = ess_sample(untempered, prior_sds, cfg, np.zeros(3))
print(f"theta at T=1:    mean {draws1[:, 2].mean():+.3f}, sd {draws1[:, 2].std():.3f}")
print("(tempering widens the posterior toward the prior)")
