use cvharness_core::augment::{apply, compose_affine, flip_horizontal, flip_vertical, sample_params, warp_affine, AugmentSpec};
use cvharness_core::image::Image;
use cvharness_core::rng::{derive_rng, RngStream};

const TRIALS: usize = 10_000;

fn random_image(rng: &mut RngStream, square: bool) -> Image {
    let h = 1 + rng.below(12);
    let w = if square { h } else { 1 + rng.below(12) };
    let ch = if rng.bernoulli(0.5) { 1 } else { 3 };
    Image::new(h, w, ch, (0..h * w * ch).map(|_| rng.uniform()).collect()).unwrap()
}

fn random_spec(rng: &mut RngStream) -> AugmentSpec {
    AugmentSpec {
        horizontal_flip: rng.bernoulli(0.5),
        vertical_flip: rng.bernoulli(0.5),
        rotation_range: if rng.bernoulli(0.5) { rng.uniform_in(0.0, 180.0) } else { 0.0 },
        shear_range: if rng.bernoulli(0.5) { rng.uniform_in(0.0, 89.0) } else { 0.0 },
        zoom_range: if rng.bernoulli(0.5) { rng.uniform_in(0.0, 1.0) } else { 0.0 },
        brightness_range: if rng.bernoulli(0.5) { rng.uniform_in(0.0, 1.0) } else { 0.0 },
    }
}

fn bits(img: &Image) -> Vec<u64> {
    img.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn exact_involutions_and_identities() {
    let mut rng = derive_rng(77, "aug-exact");
    let rot180 = compose_affine(180.0, 0.0, 1.0);
    let rot90 = compose_affine(90.0, 0.0, 1.0);
    for _ in 0..TRIALS {
        let img = random_image(&mut rng, false);
        assert_eq!(bits(&flip_horizontal(&flip_horizontal(&img))), bits(&img));
        assert_eq!(bits(&flip_vertical(&flip_vertical(&img))), bits(&img));
        let twice = warp_affine(&warp_affine(&img, &rot180).unwrap(), &rot180).unwrap();
        assert_eq!(bits(&twice), bits(&img));
        let sq = random_image(&mut rng, true);
        let mut r = sq.clone();
        for _ in 0..4 {
            r = warp_affine(&r, &rot90).unwrap();
        }
        assert_eq!(bits(&r), bits(&sq));
        let p = sample_params(&AugmentSpec::default(), &mut rng);
        assert_eq!(bits(&apply(&img, &p)), bits(&img));
    }
}

#[test]
fn outputs_stay_in_unit_range() {
    let mut rng = derive_rng(78, "aug-range");
    for _ in 0..TRIALS {
        let img = random_image(&mut rng, false);
        let spec = random_spec(&mut rng);
        let out = apply(&img, &sample_params(&spec, &mut rng));
        assert_eq!((out.height(), out.width(), out.channels()), (img.height(), img.width(), img.channels()));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn constant_images_survive_geometry() {
    let mut rng = derive_rng(79, "aug-const");
    for _ in 0..1000 {
        let v = rng.uniform();
        let img = Image::filled(9, 7, 3, v).unwrap();
        let spec = AugmentSpec { brightness_range: 0.0, ..random_spec(&mut rng) };
        let out = apply(&img, &sample_params(&spec, &mut rng));
        assert!(out.data().iter().all(|&x| x == v));
    }
}
