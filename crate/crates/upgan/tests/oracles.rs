//! Property checks against the independent oracles in `common`.

mod common;

use proptest::prelude::*;
use upgan::baselines::gaussian_blur;
use upgan::dataset::{derive_mask, reduce_landmarks};
use upgan::types::{ImageTensor, Landmarks68};

#[test]
fn mask_equals_brute_force_hull_membership() {
    // random point clouds on grids up to 32x32, checked pixel by pixel
    for seed in 0..6u64 {
        let mut rng = upgan::nn::seeded_rng(seed, &[0x77]);
        let size = 16 + 4 * (seed as usize % 5);
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|_| {
                [
                    upgan::nn::uniform(&mut rng, 2.0, size as f64 - 3.0),
                    upgan::nn::uniform(&mut rng, 2.0, size as f64 - 3.0),
                ]
            })
            .collect();
        let l68 = Landmarks68::new(pts.clone()).unwrap();
        let mask = derive_mask(&l68, (size, size)).unwrap();
        let labels = mask.as_binary().unwrap();
        for i in 0..size {
            for j in 0..size {
                let expect = common::point_in_hull_brute([j as f64, i as f64], &pts);
                assert_eq!(
                    labels[[i, j]] == 1.0,
                    expect,
                    "seed {seed}, pixel ({i}, {j})"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduce_landmarks_translation_equivariant(
        seed in 0u64..1000,
        dx in -5.0f64..5.0,
        dy in -5.0f64..5.0,
    ) {
        let mut rng = upgan::nn::seeded_rng(seed, &[0x88]);
        let pts: Vec<[f64; 2]> = (0..68)
            .map(|_| {
                [
                    upgan::nn::uniform(&mut rng, 20.0, 80.0),
                    upgan::nn::uniform(&mut rng, 20.0, 80.0),
                ]
            })
            .collect();
        let base = Landmarks68::new(pts.clone()).unwrap();
        let shifted =
            Landmarks68::new(pts.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).unwrap();
        let (a, _) = reduce_landmarks(&base, 100, 100);
        let (b, _) = reduce_landmarks(&shifted, 100, 100);
        for (pa, pb) in a.points().iter().zip(b.points().iter()) {
            prop_assert!((pa[0] + dx / 100.0 - pb[0]).abs() < 1e-9);
            prop_assert!((pa[1] + dy / 100.0 - pb[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_matches_brute_force_on_random_images(seed in 0u64..200, k in 1usize..4) {
        let kernel_size = 2 * k + 3; // 5, 7, 9
        let mut rng = upgan::nn::seeded_rng(seed, &[0x99]);
        let img = ImageTensor::new(ndarray::Array3::from_shape_fn((8, 8, 3), |_| {
            upgan::nn::uniform(&mut rng, 0.0, 1.0)
        }))
        .unwrap();
        let fast = gaussian_blur(&img, kernel_size).unwrap();
        let brute = common::brute_force_blur(&img, kernel_size);
        for (a, b) in fast.data().iter().zip(brute.iter()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
