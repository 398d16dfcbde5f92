use aeromine_core::journal::{self, JournalHeader};
use aeromine_core::optimizer::{evolve, novelty_filter, OptimizerError, SelectionKey};
use aeromine_core::oracle::SyntheticOracle;
use aeromine_core::space::CoordKind;
use aeromine_core::*;
use proptest::prelude::*;

fn space() -> DesignSpace {
    DesignSpace::default()
}

fn oracle() -> SyntheticOracle {
    SyntheticOracle::new(&space(), OracleConstants::default()).unwrap()
}

fn genome() -> impl Strategy<Value = Genome> {
    any::<u64>().prop_map(|s| space().random_genome(RandomKey::new(s, "prop-genome")).unwrap())
}

fn array(max: usize) -> impl Strategy<Value = ArrayConfiguration> {
    let layout = LayoutSpec::default();
    (
        prop::collection::vec(genome(), 1..=max),
        layout.lower..=layout.upper,
        prop::collection::vec(0.1f64..20.0, 1..4),
    )
        .prop_map(|(genomes, spacing, wind_speeds)| ArrayConfiguration {
            genomes,
            spacing,
            wind_speeds,
        })
}

fn with_rotation(g: &Genome, level: &str) -> Genome {
    let mut g = g.clone();
    let i = space().index_of("rotation").unwrap();
    g.values[i] = ParamValue::Level(level.into());
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unit_vectors_round_trip(g in genome()) {
        let s = space();
        let v = s.normalize(&g).unwrap();
        prop_assert!(v.as_slice().iter().all(|u| (0.0..=1.0).contains(u)));
        let back = s.denormalize(v.as_slice()).unwrap();
        for (a, b) in back.values.iter().zip(&g.values) {
            match (a, b) {
                (ParamValue::Number(x), ParamValue::Number(y)) => {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs(), "{x} vs {y}")
                }
                _ => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn readings_sum_to_total_power(c in array(6)) {
        let o = oracle();
        let readings = o.readings(&c);
        for (row, total) in readings.iter().zip(o.total_power(&c)) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - total).abs() <= 1e-12 * total.abs().max(1.0), "{sum} vs {total}");
        }
    }

    #[test]
    fn fitness_is_the_aggregate_of_readings(c in array(4), seed in any::<u64>()) {
        let constants = OracleConstants { noise_eta: 0.02, ..Default::default() };
        let o = SyntheticOracle::new(&space(), constants).unwrap();
        let m = o.evaluate(&c, RandomKey::new(seed, "noise"));
        prop_assert_eq!(m.fitness, aggregate_fitness(&m.readings).unwrap());
        prop_assert_eq!(&m, &o.evaluate(&c, RandomKey::new(seed, "noise")));
    }

    #[test]
    fn doubling_a_wind_speed_multiplies_its_power_by_eight(c in array(3)) {
        let o = oracle();
        let mut doubled = c.clone();
        doubled.wind_speeds.iter_mut().for_each(|v| *v *= 2.0);
        for (a, b) in o.total_power(&c).iter().zip(o.total_power(&doubled)) {
            prop_assert_eq!(8.0 * a, b);
        }
    }

    #[test]
    fn counter_rotation_beats_co_rotation(
        a in genome(),
        b in genome(),
        spacing in 0.25f64..=3.0,
        speeds in prop::collection::vec(0.5f64..15.0, 1..4),
    ) {
        let o = oracle();
        prop_assume!(o.turbine_efficiency(0, &a) > 0.0 && o.turbine_efficiency(1, &b) > 0.0);
        let eval = |ra: &str, rb: &str| o.fitness(&ArrayConfiguration {
            genomes: vec![with_rotation(&a, ra), with_rotation(&b, rb)],
            spacing,
            wind_speeds: speeds.clone(),
        });
        prop_assert!(eval("CW", "CCW") > eval("CW", "CW"));
        prop_assert!(eval("CCW", "CW") > eval("CCW", "CCW"));
    }

    #[test]
    fn identical_counter_rotating_pair_at_optimal_spacing_is_superadditive(g in genome()) {
        let o = oracle();
        let q = o.turbine_efficiency(0, &g);
        prop_assume!(q > 0.0);
        let single = o.fitness(&ArrayConfiguration { genomes: vec![g.clone()], spacing: 0.75, wind_speeds: vec![1.0] });
        let pair = o.fitness(&ArrayConfiguration {
            genomes: vec![with_rotation(&g, "CW"), with_rotation(&g, "CCW")],
            spacing: 0.75,
            wind_speeds: vec![1.0],
        });
        prop_assert!((pair - 1.25 * 2.0 * single).abs() <= 1e-12, "{pair} vs {single}");
    }

    #[test]
    fn aggregate_ignores_position_order(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5)) {
        let reversed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().rev().cloned().collect()).collect();
        let a = aggregate_fitness(&rows).unwrap();
        let b = aggregate_fitness(&reversed).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn journal_round_trips_full_precision(
        cells in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite() && v.abs() < 1e300), 2), 1..4),
        spacing in 0.25f64..=3.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let cfg = RunConfig::default();
        let mut writer = JournalWriter::create(&path, &JournalHeader::new(&cfg, RunMode::Surrogate)).unwrap();
        let g = space().random_genome(RandomKey::new(1, "g")).unwrap();
        let record = EvaluationRecord {
            record_id: 1,
            round: 0,
            position: 1,
            slot: 0,
            source: ProposalSource::SeedRandom,
            configuration: ArrayConfiguration {
                genomes: vec![g.clone(), g],
                spacing,
                wind_speeds: (1..=cells.len()).map(|v| v as f64 * 0.3).collect(),
            },
            fitness: aggregate_fitness(&cells).unwrap(),
            readings: cells,
            provenance: Provenance::Manual,
            pending_id: Some("r0-p1-s0".into()),
            idempotency_key: None,
            timestamp: "2026-01-01T00:00:00Z".into(),
        };
        writer.append(&record).unwrap();
        let loaded = journal::load(&path).unwrap();
        prop_assert_eq!(loaded.records().next(), Some(&record));
    }

    #[test]
    fn novelty_filter_accepts_only_distant_candidates(
        candidate in prop::collection::vec(0.0f64..=1.0, 3),
        archive in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 0..10),
        eps in 0.0f64..0.5,
    ) {
        let min = archive
            .iter()
            .map(|a| a.iter().zip(&candidate).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(novelty_filter(&candidate, &archive, eps), min >= eps);
    }
}

#[test]
fn selection_key_does_not_change_the_algorithm() {
    let kinds = space().coordinate_kinds();
    let objective = |v: &[f64]| -> Result<f64, OptimizerError> {
        let g = space().denormalize(v).unwrap();
        Ok(oracle().fitness(&ArrayConfiguration {
            genomes: vec![g],
            spacing: 0.75,
            wind_speeds: vec![1.0],
        }))
    };
    let mut rng = RandomKey::new(5, "initial").rng();
    let initial: Vec<Candidate> = (0..20)
        .map(|_| Candidate::new(aeromine_core::optimizer::random_vector(&kinds, &mut rng)))
        .collect();
    let params = EAParams::default();
    let stream = RandomKey::new(5, "evolve");
    let predicted = evolve(initial.clone(), 15, SelectionKey::Predicted, &params, &kinds, stream, objective).unwrap();
    let measured = evolve(initial, 15, SelectionKey::Measured, &params, &kinds, stream, objective).unwrap();
    let vectors = |pop: &[Candidate]| pop.iter().map(|c| c.vector.clone()).collect::<Vec<_>>();
    assert_eq!(vectors(&predicted), vectors(&measured));
    assert_eq!(predicted[0].predicted, measured[0].measured);
}

#[test]
fn categorical_coordinates_stay_on_their_levels() {
    let kinds = space().coordinate_kinds();
    assert_eq!(kinds[3], CoordKind::Categorical { levels: 2 });
    let mut rng = RandomKey::new(3, "levels").rng();
    for _ in 0..200 {
        let v = aeromine_core::optimizer::random_vector(&kinds, &mut rng);
        assert!(v[3] == 0.0 || v[3] == 1.0);
    }
}
