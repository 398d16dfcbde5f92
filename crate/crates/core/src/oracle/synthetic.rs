//! Desk-scale stand-in for the wind tunnel.
//!
//! Per turbine, efficiency is `q = g(σ)·h(shape)` with solidity
//! `σ = blades·chord/σ_ref`, `g(σ) = σ·e^(1−σ)` and
//! `h(s) = max(0, 1 − 4(s − s*)²)`. Each adjacent pair adds
//! `κ·e^(−((d − d*)/w)²)·ρ·√(q_i·q_j)` with `ρ = +1` for counter-rotating
//! neighbours and `−β` for co-rotating ones. Power at wind speed `v` is
//! `p_ref·v³` times the efficiency sum; each pair term is split evenly
//! between its two turbines' readings.

use rand_distr::{Distribution, Normal};

use super::{
    EvalRequest, Evaluated, EvaluationStream, Measurement, Oracle, OracleConstants, OracleError,
    Provenance, ArrayConfiguration, Readings,
};
use crate::rng::RandomKey;
use crate::space::{DesignSpace, Genome, ParamKind};

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    constants: OracleConstants,
    blades: usize,
    chord: usize,
    shape: usize,
    rotation: usize,
}

impl SyntheticOracle {
    /// Resolves the `blades`, `chord`, `shape` and `rotation` parameters.
    pub fn new(space: &DesignSpace, constants: OracleConstants) -> Result<Self, OracleError> {
        let numeric = |name: &'static str| -> Result<usize, OracleError> {
            let i = space.index_of(name).ok_or(OracleError::MissingParameter(name))?;
            if space.parameters[i].kind == ParamKind::Categorical {
                return Err(OracleError::WrongParameterKind {
                    name,
                    expected: "numeric",
                });
            }
            Ok(i)
        };
        let blades = numeric("blades")?;
        let chord = numeric("chord")?;
        let shape = numeric("shape")?;
        let rotation = space
            .index_of("rotation")
            .ok_or(OracleError::MissingParameter("rotation"))?;
        if space.parameters[rotation].kind != ParamKind::Categorical {
            return Err(OracleError::WrongParameterKind {
                name: "rotation",
                expected: "categorical",
            });
        }
        Ok(Self {
            constants,
            blades,
            chord,
            shape,
            rotation,
        })
    }

    pub fn constants(&self) -> &OracleConstants {
        &self.constants
    }

    fn num(genome: &Genome, i: usize) -> f64 {
        genome.values[i].as_f64().unwrap_or(0.0)
    }

    /// Standalone efficiency `q` of the turbine at `pos`.
    pub fn turbine_efficiency(&self, pos: usize, genome: &Genome) -> f64 {
        let c = &self.constants;
        let sigma = Self::num(genome, self.blades) * Self::num(genome, self.chord) / c.sigma_ref_at(pos);
        let g = sigma * (1.0 - sigma).exp();
        let d = Self::num(genome, self.shape) - c.s_star_at(pos);
        let h = (1.0 - 4.0 * d * d).max(0.0);
        g * h
    }

    /// Interaction term between adjacent turbines with efficiencies `qa`, `qb`.
    pub fn interaction(&self, spacing: f64, qa: f64, qb: f64, counter_rotating: bool) -> f64 {
        let c = &self.constants;
        let rho = if counter_rotating { 1.0 } else { -c.beta };
        let z = (spacing - c.d_star) / c.w;
        c.kappa * (-z * z).exp() * rho * (qa * qb).sqrt()
    }

    /// Per-turbine efficiency shares; they sum to the array efficiency.
    pub fn shares(&self, config: &ArrayConfiguration) -> Vec<f64> {
        let q: Vec<f64> = config
            .genomes
            .iter()
            .enumerate()
            .map(|(i, g)| self.turbine_efficiency(i, g))
            .collect();
        let mut shares = q.clone();
        for i in 1..q.len() {
            let counter = config.genomes[i - 1].values[self.rotation] != config.genomes[i].values[self.rotation];
            let term = self.interaction(config.spacing, q[i - 1], q[i], counter);
            shares[i - 1] += 0.5 * term;
            shares[i] += 0.5 * term;
        }
        shares
    }

    /// Noise-free readings matrix.
    pub fn readings(&self, config: &ArrayConfiguration) -> Readings {
        let shares = self.shares(config);
        config
            .wind_speeds
            .iter()
            .map(|v| {
                let scale = self.constants.p_ref * v * v * v;
                shares.iter().map(|s| scale * s).collect()
            })
            .collect()
    }

    /// Total array power at every wind speed, computed from the pair terms
    /// directly rather than from the split readings.
    pub fn total_power(&self, config: &ArrayConfiguration) -> Vec<f64> {
        let q: Vec<f64> = config
            .genomes
            .iter()
            .enumerate()
            .map(|(i, g)| self.turbine_efficiency(i, g))
            .collect();
        let mut eff: f64 = q.iter().sum();
        for i in 1..q.len() {
            let counter = config.genomes[i - 1].values[self.rotation] != config.genomes[i].values[self.rotation];
            eff += self.interaction(config.spacing, q[i - 1], q[i], counter);
        }
        config
            .wind_speeds
            .iter()
            .map(|v| self.constants.p_ref * v * v * v * eff)
            .collect()
    }

    /// Readings, with multiplicative noise drawn from `key` when `noise_eta > 0`.
    pub fn evaluate(&self, config: &ArrayConfiguration, key: RandomKey) -> Measurement {
        let mut readings = self.readings(config);
        let eta = self.constants.noise_eta;
        if eta > 0.0 {
            let mut rng = key.rng();
            let normal = Normal::new(0.0, eta).expect("noise_eta validated finite and >= 0");
            for row in &mut readings {
                for cell in row.iter_mut() {
                    *cell *= 1.0 + normal.sample(&mut rng);
                }
            }
        }
        Measurement::new(readings, Provenance::Synthetic)
            .expect("synthetic readings are rectangular and nonempty")
    }

    /// Noise-free aggregate fitness.
    pub fn fitness(&self, config: &ArrayConfiguration) -> f64 {
        super::aggregate_fitness(&self.readings(config)).unwrap_or(0.0)
    }
}

/// One-shot form of [`SyntheticOracle::evaluate`].
pub fn synthetic_evaluate(
    config: &ArrayConfiguration,
    space: &DesignSpace,
    constants: &OracleConstants,
    key: RandomKey,
) -> Result<Measurement, OracleError> {
    let oracle = SyntheticOracle::new(space, constants.clone())?;
    Ok(oracle.evaluate(config, key))
}

impl Oracle for SyntheticOracle {
    fn provenance(&self) -> Provenance {
        Provenance::Synthetic
    }

    fn evaluate_batch<'a>(
        &'a self,
        requests: &'a [EvalRequest],
    ) -> Result<EvaluationStream<'a>, OracleError> {
        Ok(Box::new(requests.iter().enumerate().map(|(index, r)| {
            Ok(Evaluated {
                index,
                measurement: self.evaluate(&r.configuration, r.noise_key),
                idempotency_key: None,
            })
        })))
    }
}
