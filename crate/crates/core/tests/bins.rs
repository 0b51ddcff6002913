use lcx_core::pfn::BinGrid;
use lcx_core::prior::PriorSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn held_out_prior_values_fill_bins_evenly() {
    let sampler = PriorSampler::new(100);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool: Vec<f64> = (0..100_000).flat_map(|_| sampler.sample(&mut rng).unwrap().y).collect();
    let grid = BinGrid::from_pool(pool, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let held_out: Vec<f64> = (0..100_000).flat_map(|_| sampler.sample(&mut rng).unwrap().y).collect();
    let mut counts = vec![0usize; grid.nbins()];
    for &y in &held_out {
        counts[grid.bin_of(y)] += 1;
    }
    let total = held_out.len();
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();

    // Noise pushes some values past 1; clamping stacks them on the top edge.
    let atom = held_out.iter().filter(|&&y| y >= 1.0).count() as f64 / total as f64;
    let clean = ((1.0 - atom) * grid.nbins() as f64).floor() as usize - 1;
    for (i, f) in fractions[..clean].iter().enumerate() {
        assert!((f - 1e-3).abs() <= 2e-4, "bin {i} holds {f}");
    }
    for (i, f) in fractions[clean..grid.nbins() - 1].iter().enumerate() {
        assert!(*f <= 1.2e-3, "bin {} holds {f}", clean + i);
    }
    let top = fractions[grid.nbins() - 1];
    assert!((top - atom).abs() <= 2e-4, "top bin {top}, clamped mass {atom}");
}

#[test]
fn bin_of_is_monotone_and_covers_the_line() {
    let grid = BinGrid::from_edges(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
    let ys = [-5.0, 0.0, 0.05, 0.1, 0.3, 0.5, 0.99, 1.0, 7.0];
    let bins: Vec<usize> = ys.iter().map(|&y| grid.bin_of(y)).collect();
    assert!(bins.windows(2).all(|w| w[0] <= w[1]), "{bins:?}");
    assert_eq!((bins[0], *bins.last().unwrap()), (0, 2));
}
