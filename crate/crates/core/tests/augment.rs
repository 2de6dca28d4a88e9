mod common;

use common::random_vec;
use sketchloop_core::augment::{
    apply_augmentation, augmentation_backward, sample_augmentation, AugmentConfig, AugmentParams, CropRect,
};
use sketchloop_core::guidance::{LatentEncoder, LatentGrid};
use sketchloop_core::{RasterImage, SketchRng};

fn random_image(rng: &mut SketchRng, w: u32, h: u32) -> RasterImage {
    RasterImage::from_data(w, h, (0..w * h).map(|_| rng.unit()).collect()).unwrap()
}

fn aggressive() -> AugmentConfig {
    AugmentConfig {
        perspective_p: 0.8,
        distortion: 0.4,
        scale: (0.5, 1.0),
        aspect: (0.8, 1.25),
        out_size: 12,
        batch: 1,
    }
}

#[test]
fn augmentation_adjoint_dot_product() {
    // The map is affine (out-of-bounds taps read white), so the adjoint
    // pairs with its linear part apply(u) - apply(0).
    let mut rng = SketchRng::new(77);
    let cfg = aggressive();
    for _ in 0..100 {
        let params = sample_augmentation(&mut rng, 16, 16, &cfg).unwrap();
        let u = RasterImage::from_data(16, 16, random_vec(&mut rng, 256)).unwrap();
        let v = RasterImage::from_data(12, 12, random_vec(&mut rng, 144)).unwrap();
        let lin = apply_augmentation(&u, &params)
            .unwrap()
            .zip_map(&apply_augmentation(&RasterImage::zeros(16, 16), &params).unwrap(), |a, b| a - b)
            .unwrap();
        let lhs = lin.dot(&v);
        let rhs = u.dot(&augmentation_backward(&params, &v).unwrap());
        assert!((lhs - rhs).abs() <= 1e-6 * u.norm() * v.norm(), "{lhs} vs {rhs}");
    }
}

#[test]
fn encoder_adjoint_dot_product() {
    let mut rng = SketchRng::new(78);
    let enc = LatentEncoder::new(4);
    for _ in 0..100 {
        let u = RasterImage::from_data(32, 24, random_vec(&mut rng, 768)).unwrap();
        let v = LatentGrid::new(8, 6, random_vec(&mut rng, 48)).unwrap();
        let lhs = enc.encode(&u).unwrap().dot(&v);
        let rhs = u.dot(&enc.encode_backward(&v).unwrap());
        let vn = v.squared_norm().sqrt();
        assert!((lhs - rhs).abs() <= 1e-9 * u.norm() * vn.max(1.0));
    }
}

#[test]
fn augmentation_backward_matches_finite_differences() {
    let mut rng = SketchRng::new(3);
    let params = sample_augmentation(&mut rng, 16, 16, &aggressive()).unwrap();
    let img = random_image(&mut rng, 16, 16);
    let v = RasterImage::from_data(12, 12, random_vec(&mut rng, 144)).unwrap();
    let g = augmentation_backward(&params, &v).unwrap();
    let h = 1e-4;
    let scale = g.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..256 {
        let mut plus = img.clone();
        plus.data_mut()[i] += h;
        let mut minus = img.clone();
        minus.data_mut()[i] -= h;
        let fd = (apply_augmentation(&plus, &params).unwrap().dot(&v)
            - apply_augmentation(&minus, &params).unwrap().dot(&v))
            / (2.0 * h);
        assert!((fd - g.data()[i]).abs() <= 1e-4 * scale, "pixel {i}: {fd} vs {}", g.data()[i]);
    }
}

#[test]
fn checkerboard_half_scale_is_four_tap_average() {
    let (w, h) = (16u32, 12u32);
    let board: Vec<f64> = (0..w * h).map(|i| ((i % w + i / w) % 2) as f64).collect();
    let src = RasterImage::from_data(w, h, board).unwrap();
    let img = RasterImage::from_data(w, h, src.data().iter().enumerate().map(|(i, v)| v * 0.5 + (i % 5) as f64 * 0.1).collect())
        .unwrap();
    // Square 12x12 crop, halved to 6x6.
    let params = AugmentParams {
        crop: CropRect { x: 2.0, y: 0.0, w: 12.0, h: 12.0 },
        ..AugmentParams::identity(w, h, 6)
    };
    let out = apply_augmentation(&img, &params).unwrap();
    for oy in 0..6 {
        for ox in 0..6 {
            let (sx, sy) = (2 + 2 * ox, 2 * oy);
            let avg = (img.get(sx, sy) + img.get(sx + 1, sy) + img.get(sx, sy + 1) + img.get(sx + 1, sy + 1)) / 4.0;
            assert!((out.get(ox, oy) - avg).abs() < 1e-12);
        }
    }
}

#[test]
fn same_params_keep_pair_aligned_at_identity() {
    let mut rng = SketchRng::new(1);
    let a = random_image(&mut rng, 20, 20);
    let b = random_image(&mut rng, 20, 20);
    let p = AugmentParams::identity(20, 20, 20);
    let prod = a.zip_map(&b, |x, y| x * y).unwrap();
    let lhs = apply_augmentation(&prod, &p).unwrap();
    let rhs = apply_augmentation(&a, &p)
        .unwrap()
        .zip_map(&apply_augmentation(&b, &p).unwrap(), |x, y| x * y)
        .unwrap();
    assert_eq!(lhs, rhs);
}

#[test]
fn identity_backward_is_identity() {
    let mut rng = SketchRng::new(2);
    let g = random_image(&mut rng, 10, 10);
    let p = AugmentParams::identity(10, 10, 10);
    assert_eq!(augmentation_backward(&p, &g).unwrap(), g);
}

#[test]
fn warped_white_stays_white() {
    let mut rng = SketchRng::new(4);
    for _ in 0..20 {
        let p = sample_augmentation(&mut rng, 30, 30, &AugmentConfig { out_size: 16, ..aggressive() }).unwrap();
        let out = apply_augmentation(&RasterImage::white(30, 30), &p).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}

#[test]
fn default_config_has_expected_ranges() {
    let c = AugmentConfig::default();
    assert_eq!((c.perspective_p, c.distortion, c.out_size), (0.7, 0.2, 512));
    let mut rng = SketchRng::new(5);
    let mut warped = 0;
    for _ in 0..2000 {
        let p = sample_augmentation(&mut rng, 600, 600, &c).unwrap();
        warped += p.apply_perspective as u32;
        let area = p.crop.w * p.crop.h / (600.0 * 600.0);
        assert!((0.7 - 1e-9..=1.0 + 1e-9).contains(&area) || p.crop.w == 600.0 || p.crop.h == 600.0);
    }
    // Binomial(2000, 0.7): mean 1400, sd about 20.5.
    assert!((1300..1500).contains(&warped), "{warped}");
}
