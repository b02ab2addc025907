use lanedqn::camera::RawImage;
use lanedqn::preproc::{preprocess, FrameStack, PreprocConfig};
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(width: usize, height: usize, seed: u64) -> RawImage {
    let mut pixels = vec![0u8; 3 * width * height];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut pixels);
    RawImage::new(width, height, pixels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_bounds_and_blue_channel(seed: u64, width in 80usize..200, height in 60usize..160) {
        let cfg = PreprocConfig::paper();
        let f = preprocess(&noise_image(width, height, seed), &cfg).unwrap();
        prop_assert_eq!((f.height, f.width), (40, 80));
        for px in f.data.chunks_exact(3) {
            prop_assert!(px[0] == 0.0 || px[0] == 1.0);
            prop_assert!(px[1] == 0.0 || px[1] == 1.0);
            prop_assert_eq!(px[2], 0.0);
        }
    }

    #[test]
    fn rows_above_crop_never_matter(seed: u64, other: u64, height in 60usize..200) {
        let cfg = PreprocConfig::paper();
        let img = noise_image(96, height, seed);
        let mut perturbed = img.clone();
        let cut = cfg.first_source_row(height);
        let noise = noise_image(96, cut.max(1), other);
        perturbed.pixels[..3 * 96 * cut].copy_from_slice(&noise.pixels[..3 * 96 * cut]);
        prop_assert_eq!(preprocess(&img, &cfg).unwrap(), preprocess(&perturbed, &cfg).unwrap());
    }

    #[test]
    fn stack_slices_recover_pushed_frames(seeds in proptest::collection::vec(any::<u64>(), 1..9), k in 1usize..6) {
        let cfg = PreprocConfig { k, ..PreprocConfig::desk() };
        let mut stack = FrameStack::new(k);
        let frames: Vec<_> = seeds.iter().map(|&s| preprocess(&noise_image(48, 36, s), &cfg).unwrap()).collect();
        let mut obs = None;
        for f in &frames {
            obs = Some(stack.push(f.clone()).unwrap());
        }
        let obs = obs.unwrap();
        prop_assert_eq!(obs.shape(), cfg.observation_shape());
        let n = frames.len();
        for i in 0..k {
            // slot i holds frame n-k+i, or the earliest frame during warm-up
            let idx = (n + i).saturating_sub(k);
            prop_assert_eq!(obs.frame(i), frames[idx].clone());
        }
    }
}

#[test]
fn segmented_palette_colors_stay_binary() {
    let cfg = PreprocConfig::paper();
    let colors: [[u8; 3]; 4] = [[230, 200, 40], [230, 230, 230], [70, 70, 75], [60, 140, 60]];
    let mut pixels = Vec::new();
    for v in 0..480 {
        for u in 0..640 {
            pixels.extend_from_slice(&colors[(u / 7 + v / 5) % 4]);
        }
    }
    let f = preprocess(&RawImage::new(640, 480, pixels).unwrap(), &cfg).unwrap();
    assert!(f.data.iter().all(|&x| x == 0.0 || x == 1.0));
}
