//! Mapping between array configurations and the normalized vectors the
//! optimizer and the surrogates work on.
//!
//! A position's *search vector* is its normalized genome, followed by the
//! normalized spacing when spacing is searched. The surrogate input for any
//! position is the whole array: every normalized genome in position order,
//! then the normalized spacing when searched.

use crate::oracle::{ArrayConfiguration, LayoutSpec};
use crate::space::{CoordKind, DesignSpace, Genome, SpaceError};

use super::config::{Pin, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    space: DesignSpace,
    layout: LayoutSpec,
    positions: usize,
    wind_speeds: Vec<f64>,
    searched: bool,
    kinds: Vec<CoordKind>,
    /// Resolved pins per position: (parameter index, value).
    pins: Vec<Vec<(usize, crate::space::ParamValue)>>,
}

impl Codec {
    pub fn new(config: &RunConfig) -> Self {
        let searched = config.layout.searched(config.positions);
        let mut kinds = config.space.coordinate_kinds();
        if searched {
            kinds.push(CoordKind::Numeric);
        }
        let pins = (0..config.positions)
            .map(|p| resolve_pins(&config.pins, &config.space, p))
            .collect();
        Self {
            space: config.space.clone(),
            layout: config.layout.clone(),
            positions: config.positions,
            wind_speeds: config.wind_speeds.clone(),
            searched,
            kinds,
            pins,
        }
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn kinds(&self) -> &[CoordKind] {
        &self.kinds
    }

    pub fn spacing_searched(&self) -> bool {
        self.searched
    }

    pub fn search_dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn input_dim(&self) -> usize {
        self.positions * self.space.len() + usize::from(self.searched)
    }

    /// Applies position pins to a genome in place.
    pub fn pin(&self, p: usize, genome: &mut Genome) {
        for (idx, value) in &self.pins[p] {
            genome.values[*idx] = value.clone();
        }
    }

    /// Decodes a search vector into a pinned genome and, if searched, a spacing.
    pub fn decode(&self, p: usize, v: &[f64]) -> Result<(Genome, Option<f64>), SpaceError> {
        let d = self.space.len();
        let mut genome = self.space.denormalize(&v[..d.min(v.len())])?;
        self.pin(p, &mut genome);
        let spacing = self.searched.then(|| self.layout.denormalize(v[d]));
        Ok((genome, spacing))
    }

    fn encode(&self, genome: &Genome, spacing: f64) -> Result<Vec<f64>, SpaceError> {
        let mut out = self.space.normalize(genome)?.0;
        if self.searched {
            out.push(self.layout.normalize(spacing));
        }
        Ok(out)
    }

    /// The point the search vector actually evaluates to, re-encoded.
    pub fn snap(&self, p: usize, v: &[f64]) -> Result<Vec<f64>, SpaceError> {
        let (genome, spacing) = self.decode(p, v)?;
        self.encode(&genome, spacing.unwrap_or(self.layout.initial))
    }

    /// Search vector of position `p` within a configuration.
    pub fn search_vector(&self, p: usize, config: &ArrayConfiguration) -> Result<Vec<f64>, SpaceError> {
        self.encode(&config.genomes[p], config.spacing)
    }

    /// Places the design encoded by `v` at position `p` among `context`.
    pub fn compose(
        &self,
        p: usize,
        v: &[f64],
        context: &[Genome],
    ) -> Result<ArrayConfiguration, SpaceError> {
        let (genome, spacing) = self.decode(p, v)?;
        let mut genomes = context.to_vec();
        genomes[p] = genome;
        Ok(ArrayConfiguration {
            genomes,
            spacing: spacing.unwrap_or(self.layout.initial),
            wind_speeds: self.wind_speeds.clone(),
        })
    }

    /// Array-level configuration from explicit genomes and spacing.
    pub fn assemble(&self, genomes: Vec<Genome>, spacing: f64) -> ArrayConfiguration {
        ArrayConfiguration {
            genomes,
            spacing: if self.searched { spacing } else { self.layout.initial },
            wind_speeds: self.wind_speeds.clone(),
        }
    }

    /// Surrogate input vector of a full configuration.
    pub fn input(&self, config: &ArrayConfiguration) -> Result<Vec<f64>, SpaceError> {
        config.to_unit_vector(&self.space, &self.layout)
    }

    /// Surrogate input for candidate `v` at `p`, computed without building the
    /// configuration. `context` holds the normalized genomes of every position.
    pub fn input_in_context(&self, p: usize, v: &[f64], context: &[Vec<f64>]) -> Vec<f64> {
        let d = self.space.len();
        let mut out = Vec::with_capacity(self.input_dim());
        for (q, g) in context.iter().enumerate() {
            if q == p {
                out.extend_from_slice(&v[..d]);
            } else {
                out.extend_from_slice(g);
            }
        }
        if self.searched {
            out.push(v[d]);
        }
        out
    }

    pub fn random_spacing(&self, u: f64) -> f64 {
        if self.searched {
            self.layout.denormalize(u)
        } else {
            self.layout.initial
        }
    }
}

fn resolve_pins(pins: &[Pin], space: &DesignSpace, p: usize) -> Vec<(usize, crate::space::ParamValue)> {
    pins.iter()
        .filter(|pin| pin.position.is_none_or(|q| q == p + 1))
        .filter_map(|pin| space.index_of(&pin.parameter).map(|i| (i, pin.value.clone())))
        .collect()
}
