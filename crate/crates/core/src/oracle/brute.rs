//! Exhaustive grid search over the noise-free synthetic function.

use super::{ArrayConfiguration, LayoutSpec, OracleError, SyntheticOracle};
use crate::space::{DesignSpace, Genome, ParamKind, ParamValue};

/// Default upper bound on evaluated grid points.
pub const DEFAULT_GRID_CAP: u64 = 10_000_000;

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub configuration: ArrayConfiguration,
    pub fitness: f64,
    pub evaluated: u64,
}

/// Grid values of one parameter, ascending in normalized coordinate.
fn axis(kind: ParamKind, lower: f64, upper: f64, levels: &[String], resolution: usize) -> Vec<ParamValue> {
    if resolution <= 1 {
        return vec![match kind {
            ParamKind::Categorical => ParamValue::Level(levels[0].clone()),
            _ => ParamValue::Number(lower),
        }];
    }
    match kind {
        ParamKind::Continuous => (0..resolution)
            .map(|i| {
                if i + 1 == resolution {
                    ParamValue::Number(upper)
                } else {
                    ParamValue::Number(lower + (upper - lower) * i as f64 / (resolution - 1) as f64)
                }
            })
            .collect(),
        ParamKind::Integer => (lower as i64..=upper as i64)
            .map(|v| ParamValue::Number(v as f64))
            .collect(),
        ParamKind::Categorical => levels.iter().cloned().map(ParamValue::Level).collect(),
    }
}

fn spacing_axis(layout: &LayoutSpec, positions: usize, resolution: usize) -> Vec<f64> {
    if !layout.searched(positions) {
        return vec![layout.initial];
    }
    if resolution <= 1 {
        return vec![layout.lower];
    }
    (0..resolution)
        .map(|i| {
            if i + 1 == resolution {
                layout.upper
            } else {
                layout.lower + (layout.upper - layout.lower) * i as f64 / (resolution - 1) as f64
            }
        })
        .collect()
}

/// Advances a mixed-radix counter, last digit fastest. Returns false on wrap.
fn odometer(digits: &mut [usize], radix: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radix[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// Evaluates every grid point of an `positions`-turbine array and returns the
/// best one.
///
/// Continuous dimensions (and spacing, when searched) take `resolution`
/// evenly spaced values including both endpoints; integer and categorical
/// dimensions are enumerated in full. A resolution of 1 evaluates only the
/// lower-bound corner. Points are visited in lexicographic order of their
/// normalized vectors and only a strictly better fitness replaces the
/// incumbent, so ties resolve to the lexicographically smallest vector.
pub fn brute_force_optimum(
    oracle: &SyntheticOracle,
    space: &DesignSpace,
    positions: usize,
    layout: &LayoutSpec,
    wind_speeds: &[f64],
    resolution: usize,
    cap: u64,
) -> Result<BruteForceResult, OracleError> {
    space.validate().map_err(|v| OracleError::Space(crate::space::SpaceError::Invalid(v)))?;
    if positions == 0 {
        return Err(OracleError::InvalidConfiguration("no turbines".into()));
    }
    super::validate_wind_speeds(wind_speeds).map_err(OracleError::InvalidConfiguration)?;

    let axes: Vec<Vec<ParamValue>> = space
        .parameters
        .iter()
        .map(|p| {
            let (lo, hi) = p.bounds();
            axis(p.kind, lo, hi, &p.levels, resolution)
        })
        .collect();
    let spacings = spacing_axis(layout, positions, resolution);

    let per_turbine: u128 = axes.iter().map(|a| a.len() as u128).product();
    let points = per_turbine
        .checked_pow(positions as u32)
        .and_then(|p| p.checked_mul(spacings.len() as u128))
        .unwrap_or(u128::MAX);
    if points > cap as u128 {
        return Err(OracleError::GridTooLarge { points, cap });
    }

    // every single-turbine design, in lexicographic order
    let radix: Vec<usize> = axes.iter().map(Vec::len).collect();
    let mut designs = Vec::with_capacity(per_turbine as usize);
    let mut digits = vec![0; radix.len()];
    loop {
        designs.push(Genome::new(
            digits.iter().zip(&axes).map(|(&d, a)| a[d].clone()).collect(),
        ));
        if !odometer(&mut digits, &radix) {
            break;
        }
    }

    let mut radix = vec![designs.len(); positions];
    radix.push(spacings.len());
    let mut digits = vec![0; positions + 1];
    let mut config = ArrayConfiguration {
        genomes: vec![designs[0].clone(); positions],
        spacing: spacings[0],
        wind_speeds: wind_speeds.to_vec(),
    };
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluated = 0u64;
    loop {
        for p in 0..positions {
            config.genomes[p].clone_from(&designs[digits[p]]);
        }
        config.spacing = spacings[digits[positions]];
        let f = oracle.fitness(&config);
        evaluated += 1;
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((digits.clone(), f));
        }
        if !odometer(&mut digits, &radix) {
            break;
        }
    }

    let (digits, fitness) = best.expect("grid has at least one point");
    Ok(BruteForceResult {
        configuration: ArrayConfiguration {
            genomes: digits[..positions].iter().map(|&d| designs[d].clone()).collect(),
            spacing: spacings[digits[positions]],
            wind_speeds: wind_speeds.to_vec(),
        },
        fitness,
        evaluated,
    })
}
