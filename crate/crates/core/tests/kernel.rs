use qbsde::kernel::{load_or_simulate, read_cache, write_cache, CacheKey, RandomSource, ScenarioBundle, ScenarioSpec, TimeGrid};

fn bundle(steps: usize, paths: usize, seed: u64, stream: u64) -> ScenarioBundle {
    let g = TimeGrid::build(1.0, steps, &[]).unwrap();
    ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(2, 1, paths), RandomSource::new(seed, stream)).unwrap()
}

#[test]
fn increments_have_brownian_moments() {
    let b = bundle(4, 20_000, 3, 0);
    let n = b.n_paths() as f64;
    for i in 0..4 {
        let dt = b.grid().dt(i);
        for k in 0..2 {
            let xs: Vec<f64> = (0..b.n_paths()).map(|p| b.dm(i, p, k)).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 4.0 * (dt / n).sqrt(), "mean {mean}");
            // sd of the sample variance is dt * sqrt(2 / n)
            assert!((var - dt).abs() < 4.0 * dt * (2.0 / n).sqrt(), "var {var} vs {dt}");
        }
        let cross: f64 = (0..b.n_paths()).map(|p| b.dm(i, p, 0) * b.dm(i, p, 1)).sum::<f64>() / n;
        assert!(cross.abs() < 4.0 * dt / n.sqrt());
    }
}

#[test]
fn paths_accumulate_increments() {
    let b = bundle(5, 64, 1, 0);
    for p in 0..b.n_paths() {
        assert_eq!(b.m_at(0, p), &[0.0, 0.0]);
        let mut m = 0.0;
        let mut w = 0.0;
        for i in 0..5 {
            m += b.dm(i, p, 1);
            w += b.dw_orth(i, p, 0);
            assert!((b.m_at(i + 1, p)[1] - m).abs() < 1e-12);
            assert!((b.orth_at(i + 1, p)[0] - w).abs() < 1e-12);
        }
    }
}

#[test]
fn seeding_is_reproducible_and_block_stable() {
    let a = bundle(3, 600, 9, 0);
    let b = bundle(3, 600, 9, 0);
    assert_eq!(a.m_column(3), b.m_column(3));
    let c = bundle(3, 600, 9, 1);
    assert_ne!(a.m_column(3), c.m_column(3));
    let d = bundle(3, 1200, 9, 0);
    // each block of paths has its own generator, so a larger run extends a smaller one
    assert_eq!(a.m_column(3), &d.m_column(3)[..600 * 2]);
}

#[test]
fn mandatory_nodes_are_kept() {
    let g = TimeGrid::build(2.0, 16, &[1.0 / 3.0, 0.25]).unwrap();
    assert!(g.index_of(1.0 / 3.0).is_some());
    assert!(g.index_of(0.25).is_some());
    assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    assert_eq!(g.horizon(), 2.0);
    assert!(TimeGrid::build(1.0, 4, &[1.5]).is_err());
}

#[test]
fn restriction_keeps_coarse_values() {
    let fine = bundle(8, 32, 4, 0);
    let coarse = TimeGrid::build(1.0, 4, &[]).unwrap();
    let r = fine.restrict_to(&coarse).unwrap();
    assert_eq!(r.grid().steps(), 4);
    for i in 0..=4 {
        assert_eq!(r.m_column(i), fine.m_column(2 * i));
    }
    assert!(fine.restrict_to(&TimeGrid::build(1.0, 3, &[]).unwrap()).is_err());
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(4, 100, 5, 2);
    let path = dir.path().join("b.bin");
    write_cache(&b, &path).unwrap();
    let back = read_cache(&path).unwrap();
    assert_eq!(CacheKey::of(&back), CacheKey::of(&b));
    for i in 0..=4 {
        assert_eq!(back.m_column(i), b.m_column(i));
        assert_eq!(back.orth_column(i), b.orth_column(i));
    }
    let key = CacheKey::of(&b);
    let mut calls = 0;
    let again = load_or_simulate(dir.path(), &key, || {
        calls += 1;
        Ok(b.clone())
    })
    .unwrap();
    assert_eq!(calls, 1);
    let cached = load_or_simulate(dir.path(), &key, || unreachable!()).unwrap();
    assert_eq!(cached.m_column(4), again.m_column(4));
}
