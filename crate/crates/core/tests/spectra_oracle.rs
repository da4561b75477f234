use iasearch_core::spectra::eigenpairs;
use iasearch_core::synth::TapGenerator;
use iasearch_core::{CovarianceAccumulator, Eigenspectrum, FeatureMap, SynthTapSpec};
use iasearch_testkit::{jacobi_eigenvalues, normalize_spectrum, random_orthogonal, random_psd};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_maps(seed: u64, channels: u32, n: usize) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let data = (0..channels * h * w).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            FeatureMap::new(channels, h, w, data)
        })
        .collect()
}

fn covariance_of(maps: &[FeatureMap]) -> DMatrix<f64> {
    let mut acc = CovarianceAccumulator::new("t", maps[0].channels as usize);
    for m in maps {
        acc.accumulate(m).unwrap();
    }
    acc.finalize().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn spectrum_matches_jacobi(seed in any::<u64>(), n in 1usize..=64, rank_frac in 0.1f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = ((n as f64 * rank_frac).ceil() as usize).max(1);
        let m = random_psd(&mut rng, n, rank);
        let ours = Eigenspectrum::from_covariance("t", &m).unwrap();
        let oracle = normalize_spectrum(&jacobi_eigenvalues(&m));
        prop_assert!(max_diff(&ours.values, &oracle) <= 1e-6);
    }

    #[test]
    fn eigenpairs_have_small_residuals(seed in any::<u64>(), n in 1usize..=48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_psd(&mut rng, n, n);
        let norm = m.norm();
        for (lambda, v) in eigenpairs(&m).unwrap() {
            prop_assert!((&m * &v - &v * lambda).norm() <= 1e-8 * norm);
            prop_assert!((v.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_and_scale_leave_the_spectrum_alone(seed in any::<u64>(), n in 1usize..=40, scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_psd(&mut rng, n, n);
        let q = random_orthogonal(&mut rng, n);
        let base = Eigenspectrum::from_covariance("t", &m).unwrap();
        let rotated = Eigenspectrum::from_covariance("t", &(&q * &m * q.transpose())).unwrap();
        let scaled = Eigenspectrum::from_covariance("t", &(&m * scale)).unwrap();
        prop_assert!(max_diff(&base.values, &rotated.values) <= 1e-8);
        prop_assert!(max_diff(&base.values, &scaled.values) <= 1e-8);
    }

    #[test]
    fn sharded_accumulation_matches_sequential(seed in any::<u64>(), shards in 1usize..=8) {
        let maps = random_maps(seed, 7, 24);
        let whole = covariance_of(&maps);
        let chunk = maps.len().div_ceil(shards);
        let mut parts = maps.chunks(chunk).map(|c| {
            let mut acc = CovarianceAccumulator::new("t", 7);
            c.iter().for_each(|m| acc.accumulate(m).unwrap());
            acc
        });
        let mut merged = parts.next().unwrap();
        for p in parts {
            merged.merge(&p).unwrap();
        }
        prop_assert_eq!(merged.n_images(), 24);
        prop_assert!((merged.finalize().unwrap() - &whole).abs().max() <= 1e-10);
    }

    #[test]
    fn image_order_does_not_matter(seed in any::<u64>()) {
        let maps = random_maps(seed, 5, 16);
        let mut shuffled = maps.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        prop_assert!((covariance_of(&maps) - covariance_of(&shuffled)).abs().max() <= 1e-10);
    }
}

#[test]
fn covariance_definition_by_hand() {
    // Two images, two channels; per-image mean of outer products, then mean over images.
    let a = FeatureMap::new(2, 1, 2, vec![1.0, 3.0, 2.0, 0.0]);
    let b = FeatureMap::new(2, 1, 1, vec![2.0, -1.0]);
    let got = covariance_of(&[a, b]);
    // Image a: vectors (1,2) and (3,0): mean outer = [[5,1],[1,2]].
    // Image b: vector (2,-1): outer = [[4,-2],[-2,1]].
    let want = DMatrix::from_row_slice(2, 2, &[4.5, -0.5, -0.5, 1.5]);
    assert!((got - want).abs().max() < 1e-12);
}

#[test]
fn recovers_known_eigenvalues_within_five_percent() {
    let spec = SynthTapSpec {
        id: "t".into(),
        channels: 6,
        eigenvalues: vec![4.0, 2.0, 1.0, 0.5, 0.25, 0.1],
        noise: 0.0,
        n_images: 2000,
        resolutions: vec![[4, 4]],
    };
    let generator = TapGenerator::new(&spec, 11, 0).unwrap();
    let mut acc = CovarianceAccumulator::new("t", 6);
    for i in 0..spec.n_images {
        acc.accumulate(&generator.image(i)).unwrap();
    }
    let raw = jacobi_eigenvalues(&acc.finalize().unwrap());
    for (got, want) in raw.iter().zip(&spec.eigenvalues) {
        assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
    }
}

#[test]
fn rank_twelve_is_recovered_exactly() {
    let spec = SynthTapSpec::low_rank("t", 64, 12, 400);
    let generator = TapGenerator::new(&spec, 3, 0).unwrap();
    let mut acc = CovarianceAccumulator::new("t", 64);
    for i in 0..spec.n_images {
        acc.accumulate(&generator.image(i)).unwrap();
    }
    let s = Eigenspectrum::from_covariance("t", &acc.finalize().unwrap()).unwrap();
    assert_eq!(s.intrinsic_dim(1e-3).unwrap(), 12);
    assert_eq!(s.intrinsic_dim(3.162e-4).unwrap(), 12);
}
