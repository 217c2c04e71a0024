"""Model zoo with exact references."""
from .hmm import DiscreteHMM, EnumerableHMM, FFBSReference, HMMFixture, hmm_fixture, random_hmm
from .linreg import (ConjugateOracle, GaussianPosterior, LinRegFixture, LinRegModel,
                     linreg_conjugate_posterior, linreg_fixture)
from .meanfield import GaussianMeanField
from .noisyor import (NoisyOrFixture, NoisyOrNetwork, noisyor_annealing_schedule,
                      noisyor_fixture, noisyor_kernel, noisyor_kernels, noisyor_network)
from .toy import (DiscreteLatentModel, PairwiseBinaryModel, ToyFixture, bernoulli_toy,
                  coupled_sites_fixture, three_state_chain_fixture,
                  toy_bernoulli_fixture)

__all__ = [
    "ConjugateOracle", "DiscreteHMM", "DiscreteLatentModel", "EnumerableHMM", "FFBSReference",
    "GaussianMeanField", "GaussianPosterior", "HMMFixture", "LinRegFixture", "LinRegModel",
    "NoisyOrFixture", "NoisyOrNetwork", "PairwiseBinaryModel", "ToyFixture",
    "coupled_sites_fixture", "bernoulli_toy", "hmm_fixture",
    "linreg_conjugate_posterior", "linreg_fixture", "noisyor_annealing_schedule",
    "noisyor_fixture", "noisyor_kernel", "noisyor_kernels", "noisyor_network", "random_hmm",
    "three_state_chain_fixture", "toy_bernoulli_fixture",
]
